#include "veridispatch/difficulty.hpp"

#include <fmt/format.h>

#include <cmath>

namespace veridispatch {

void ScoreConfig::validate() const {
  if (w_syntax < 0 || w_struct < 0 || w_func < 0) throw Error("score weights must be non-negative");
  if (!(weight_sum() > 0)) throw Error("score weights must not all be zero");
  if (!(mean_low < mean_high)) throw Error("mean band must satisfy low < high");
  if (!(hard_threshold > 0 && hard_threshold < 1)) throw Error("hard_threshold must lie in (0,1)");
  if (n_samples < 1) throw Error("n_samples must be at least 1");
}

json to_json(const ScoreConfig& c) {
  return {{"w_syntax", c.w_syntax},   {"w_struct", c.w_struct},
          {"w_func", c.w_func},       {"mean_band", {c.mean_low, c.mean_high}},
          {"std_min", c.std_min},     {"hard_threshold", c.hard_threshold},
          {"n_samples", c.n_samples}};
}

ScoreConfig score_config_from_json(const json& j) {
  ScoreConfig c;
  c.w_syntax = j.value("w_syntax", c.w_syntax);
  c.w_struct = j.value("w_struct", c.w_struct);
  c.w_func = j.value("w_func", c.w_func);
  if (j.contains("mean_band")) {
    auto band = require<std::vector<double>>(j, "mean_band");
    if (band.size() != 2) throw Error("mean_band must have two entries");
    c.mean_low = band[0];
    c.mean_high = band[1];
  }
  c.std_min = j.value("std_min", c.std_min);
  c.hard_threshold = j.value("hard_threshold", c.hard_threshold);
  c.n_samples = j.value("n_samples", c.n_samples);
  c.validate();
  return c;
}

std::string_view to_string(Difficulty d) { return d == Difficulty::hard ? "hard" : "easy"; }

Difficulty difficulty_from_string(std::string_view s) {
  if (s == "hard") return Difficulty::hard;
  if (s == "easy") return Difficulty::easy;
  throw Error(fmt::format("unknown difficulty label '{}'", s));
}

json to_json(const DifficultyLabel& l) {
  return {{"variant_id", l.variant_id},         {"model_id", l.model_id},
          {"raw_mean", l.raw_mean},             {"raw_std", l.raw_std},
          {"filtered_score", l.filtered_score}, {"label", to_string(l.label)},
          {"kept", l.kept}};
}

DifficultyLabel label_from_json(const json& j) {
  DifficultyLabel l;
  l.variant_id = require<std::string>(j, "variant_id");
  l.model_id = require<std::string>(j, "model_id");
  l.raw_mean = require<double>(j, "raw_mean");
  l.raw_std = require<double>(j, "raw_std");
  l.filtered_score = require<double>(j, "filtered_score");
  l.label = difficulty_from_string(require<std::string>(j, "label"));
  l.kept = require<bool>(j, "kept");
  return l;
}

std::vector<DifficultyLabel> load_labels(const std::filesystem::path& path) {
  std::vector<DifficultyLabel> out;
  for_each_record(path, [&](std::size_t, const json& j) { out.push_back(label_from_json(j)); });
  return out;
}

void save_labels(const std::filesystem::path& path, const std::vector<DifficultyLabel>& labels) {
  std::vector<json> records;
  records.reserve(labels.size());
  for (const auto& l : labels) records.push_back(to_json(l));
  write_records(path, records);
}

double score_generation(const GenerationOutcome& o, const ScoreConfig& cfg) {
  return cfg.w_syntax * (o.syntax_ok ? 0.0 : 1.0) +
         cfg.w_struct * (1.0 - o.structural_similarity) +
         cfg.w_func * (o.functional_ok ? 0.0 : 1.0);
}

namespace {

void apply_filter(DifficultyLabel& l, const ScoreConfig& cfg) {
  l.filtered_score = l.raw_mean / cfg.weight_sum();
  l.label = l.filtered_score > cfg.hard_threshold ? Difficulty::hard : Difficulty::easy;
  l.kept = cfg.mean_low <= l.raw_mean && l.raw_mean <= cfg.mean_high && l.raw_std > cfg.std_min;
}

}  // namespace

DifficultyLabel aggregate(std::span<const GenerationOutcome> outcomes, const ScoreConfig& cfg) {
  if (outcomes.empty()) throw Error("cannot aggregate an empty outcome list");
  DifficultyLabel l{outcomes.front().variant_id, outcomes.front().model_id};
  double sum = 0.0;
  std::vector<double> scores;
  scores.reserve(outcomes.size());
  for (const auto& o : outcomes) {
    if (o.variant_id != l.variant_id || o.model_id != l.model_id) {
      throw Error(fmt::format("aggregate got mixed ids: ({}, {}) vs ({}, {})", l.variant_id,
                              l.model_id, o.variant_id, o.model_id));
    }
    scores.push_back(score_generation(o, cfg));
    sum += scores.back();
  }
  const auto n = static_cast<double>(scores.size());
  l.raw_mean = sum / n;
  double ss = 0.0;
  for (double s : scores) ss += (s - l.raw_mean) * (s - l.raw_mean);
  l.raw_std = std::sqrt(ss / n);
  apply_filter(l, cfg);
  return l;
}

LabelSet score_model(const Corpus& corpus, const std::string& model_id, const ScoreConfig& cfg) {
  cfg.validate();
  LabelSet set;
  for (const auto& [variant_id, outcomes] : corpus.outcomes_by_variant(model_id)) {
    if (static_cast<int>(outcomes.size()) < cfg.n_samples) {
      set.diagnostics.push_back(fmt::format("variant '{}' has {} of {} outcomes for model '{}'; skipped",
                                            variant_id, outcomes.size(), cfg.n_samples, model_id));
      continue;
    }
    set.labels.push_back(aggregate(outcomes, cfg));
  }
  return set;
}

std::vector<DifficultyLabel> build_label_set(const Corpus& corpus, const std::string& model_id,
                                             const ScoreConfig& cfg) {
  auto set = score_model(corpus, model_id, cfg);
  std::vector<DifficultyLabel> kept;
  for (auto& l : set.labels) {
    if (l.kept) kept.push_back(std::move(l));
  }
  if (kept.empty()) throw Error(fmt::format("zero kept labels for model '{}'", model_id));
  return kept;
}

std::vector<DifficultyLabel> refilter(std::span<const DifficultyLabel> labels,
                                      const ScoreConfig& cfg) {
  std::vector<DifficultyLabel> kept;
  for (auto l : labels) {
    apply_filter(l, cfg);
    if (l.kept) kept.push_back(std::move(l));
  }
  return kept;
}

}  // namespace veridispatch
