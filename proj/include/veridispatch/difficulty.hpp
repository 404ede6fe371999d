#pragma once

#include <span>
#include <string>
#include <vector>

#include "veridispatch/corpus.hpp"

namespace veridispatch {

/// Weights for the per-generation failure score, plus the filtration band
/// and hard/easy threshold applied to the aggregate.
struct ScoreConfig {
  double w_syntax = 1.0;
  double w_struct = 0.5;
  double w_func = 0.5;
  double mean_low = 0.3;
  double mean_high = 1.8;
  double std_min = 0.1;
  double hard_threshold = 0.5;
  int n_samples = 10;

  double weight_sum() const { return w_syntax + w_struct + w_func; }
  void validate() const;
};

json to_json(const ScoreConfig& c);
ScoreConfig score_config_from_json(const json& j);

enum class Difficulty { easy, hard };

std::string_view to_string(Difficulty d);
Difficulty difficulty_from_string(std::string_view s);

struct DifficultyLabel {
  std::string variant_id;
  std::string model_id;
  double raw_mean = 0.0;
  double raw_std = 0.0;
  double filtered_score = 0.0;
  Difficulty label = Difficulty::easy;
  bool kept = false;
};

json to_json(const DifficultyLabel& l);
DifficultyLabel label_from_json(const json& j);
std::vector<DifficultyLabel> load_labels(const std::filesystem::path& path);
void save_labels(const std::filesystem::path& path, const std::vector<DifficultyLabel>& labels);

/// Weighted failure severity of one generation; 0 is a perfect generation.
double score_generation(const GenerationOutcome& o, const ScoreConfig& cfg);

/// Mean and population standard deviation of the per-generation scores,
/// normalized score, label, and filter verdict for one (variant, model).
DifficultyLabel aggregate(std::span<const GenerationOutcome> outcomes, const ScoreConfig& cfg);

struct LabelSet {
  std::vector<DifficultyLabel> labels;     // every aggregated pair, kept or not
  std::vector<std::string> diagnostics;    // variants skipped for missing samples
};

/// Aggregates every variant of `model_id` that has at least cfg.n_samples
/// outcomes, in variant-id order.
LabelSet score_model(const Corpus& corpus, const std::string& model_id, const ScoreConfig& cfg);

/// Kept labels only. Throws when nothing survives the filter.
std::vector<DifficultyLabel> build_label_set(const Corpus& corpus, const std::string& model_id,
                                             const ScoreConfig& cfg);

/// Re-applies the filter to labels that carry their raw statistics.
std::vector<DifficultyLabel> refilter(std::span<const DifficultyLabel> labels,
                                      const ScoreConfig& cfg);

}  // namespace veridispatch
