#include "veridispatch/corpus.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

namespace veridispatch {

std::string_view to_string(Benchmark b) {
  switch (b) {
    case Benchmark::rtllm: return "rtllm";
    case Benchmark::verilogeval: return "verilogeval";
    case Benchmark::custom: return "custom";
  }
  return "custom";
}

Benchmark benchmark_from_string(std::string_view s) {
  if (s == "rtllm") return Benchmark::rtllm;
  if (s == "verilogeval") return Benchmark::verilogeval;
  if (s == "custom") return Benchmark::custom;
  throw Error(fmt::format("unknown benchmark '{}'", s));
}

json to_json(const TaskRecord& t) {
  json j{{"task_id", t.task_id}, {"benchmark", to_string(t.benchmark)},
         {"description", t.description}};
  if (t.reference_solution) j["reference_solution"] = *t.reference_solution;
  return j;
}

json to_json(const VariantRecord& v) {
  return {{"variant_id", v.variant_id}, {"task_id", v.task_id},
          {"variant_index", v.variant_index}, {"description", v.description}};
}

json to_json(const GenerationOutcome& o) {
  json j{{"variant_id", o.variant_id},
         {"model_id", o.model_id},
         {"sample_index", o.sample_index},
         {"syntax_ok", o.syntax_ok},
         {"structural_similarity", o.structural_similarity},
         {"functional_ok", o.functional_ok}};
  if (o.generated_source) j["generated_source"] = *o.generated_source;
  return j;
}

TaskRecord task_from_json(const json& j) {
  TaskRecord t;
  t.task_id = require<std::string>(j, "task_id");
  t.benchmark = benchmark_from_string(require<std::string>(j, "benchmark"));
  t.description = require<std::string>(j, "description");
  if (j.contains("reference_solution") && !j["reference_solution"].is_null()) {
    t.reference_solution = require<std::string>(j, "reference_solution");
  }
  if (t.task_id.empty()) throw Error("empty task_id");
  if (t.description.empty()) throw Error(fmt::format("task '{}' has an empty description", t.task_id));
  return t;
}

VariantRecord variant_from_json(const json& j) {
  VariantRecord v;
  v.variant_id = require<std::string>(j, "variant_id");
  v.task_id = require<std::string>(j, "task_id");
  v.variant_index = require<int>(j, "variant_index");
  v.description = require<std::string>(j, "description");
  if (v.variant_id.empty()) throw Error("empty variant_id");
  if (v.variant_index < 0) throw Error(fmt::format("variant '{}' has a negative index", v.variant_id));
  if (v.description.empty()) throw Error(fmt::format("variant '{}' has an empty description", v.variant_id));
  return v;
}

GenerationOutcome outcome_from_json(const json& j) {
  GenerationOutcome o;
  o.variant_id = require<std::string>(j, "variant_id");
  o.model_id = require<std::string>(j, "model_id");
  o.sample_index = require<int>(j, "sample_index");
  o.syntax_ok = require<bool>(j, "syntax_ok");
  o.structural_similarity = require<double>(j, "structural_similarity");
  o.functional_ok = require<bool>(j, "functional_ok");
  if (j.contains("generated_source") && !j["generated_source"].is_null()) {
    o.generated_source = require<std::string>(j, "generated_source");
  }
  validate_outcome(o);
  return o;
}

void validate_outcome(const GenerationOutcome& o) {
  if (o.model_id.empty()) throw Error("empty model_id");
  if (o.sample_index < 0) throw Error("negative sample_index");
  if (!std::isfinite(o.structural_similarity) || o.structural_similarity < 0.0 ||
      o.structural_similarity > 1.0) {
    throw Error(fmt::format("structural_similarity {} outside [0,1]", o.structural_similarity));
  }
  if (!o.syntax_ok && o.functional_ok) {
    throw Error("functional_ok=true requires syntax_ok=true");
  }
}

const TaskRecord* Corpus::find_task(std::string_view task_id) const {
  auto it = task_index_.find(task_id);
  return it == task_index_.end() ? nullptr : &tasks_[it->second];
}

const VariantRecord* Corpus::find_variant(std::string_view variant_id) const {
  auto it = variant_index_.find(variant_id);
  return it == variant_index_.end() ? nullptr : &variants_[it->second];
}

std::map<std::string, std::vector<GenerationOutcome>> Corpus::outcomes_by_variant(
    std::string_view model_id) const {
  std::map<std::string, std::vector<GenerationOutcome>> grouped;
  for (const auto& o : outcomes_) {
    if (o.model_id == model_id) grouped[o.variant_id].push_back(o);
  }
  return grouped;
}

void Corpus::add_task(TaskRecord t) {
  if (task_index_.count(t.task_id)) throw Error(fmt::format("duplicate task_id '{}'", t.task_id));
  task_index_.emplace(t.task_id, tasks_.size());
  tasks_.push_back(std::move(t));
}

void Corpus::add_variant(VariantRecord v) {
  if (variant_index_.count(v.variant_id)) {
    throw Error(fmt::format("duplicate variant_id '{}'", v.variant_id));
  }
  const TaskRecord* parent = find_task(v.task_id);
  if (!parent) {
    throw Error(fmt::format("variant '{}' references unknown task '{}'", v.variant_id, v.task_id));
  }
  if (v.variant_index == 0 && v.description != parent->description) {
    throw Error(fmt::format("variant '{}' has index 0 but differs from task '{}' description",
                            v.variant_id, v.task_id));
  }
  variant_index_.emplace(v.variant_id, variants_.size());
  variants_.push_back(std::move(v));
}

void Corpus::add_outcome(GenerationOutcome o) {
  validate_outcome(o);
  if (!find_variant(o.variant_id)) {
    throw Error(fmt::format("outcome references unknown variant '{}'", o.variant_id));
  }
  if (!models_.empty() && !models_.count(o.model_id)) {
    throw Error(fmt::format("outcome references unknown model '{}'", o.model_id));
  }
  auto key = std::make_tuple(o.variant_id, o.model_id, o.sample_index);
  if (!outcome_keys_.insert(key).second) {
    throw Error(fmt::format("duplicate outcome ({}, {}, sample {})", o.variant_id, o.model_id,
                            o.sample_index));
  }
  outcomes_.push_back(std::move(o));
}

void Corpus::declare_model(std::string model_id) {
  if (model_id.empty()) throw Error("empty model_id");
  if (!models_.insert(std::move(model_id)).second) throw Error("duplicate model_id");
}

void Corpus::check_complete() const {
  std::set<std::string, std::less<>> has_original;
  for (const auto& v : variants_) {
    if (v.variant_index == 0) {
      if (!has_original.insert(v.task_id).second) {
        throw Error(fmt::format("task '{}' has more than one index-0 variant", v.task_id));
      }
    }
  }
  for (const auto& t : tasks_) {
    if (!has_original.count(t.task_id)) {
      throw Error(fmt::format("task '{}' has no index-0 variant", t.task_id));
    }
  }
}

CorpusPaths CorpusPaths::in_directory(const std::filesystem::path& dir) {
  return {dir / "tasks.jsonl", dir / "variants.jsonl", dir / "outcomes.jsonl",
          dir / "models.jsonl"};
}

Corpus load_corpus(const CorpusPaths& paths) {
  Corpus corpus;
  if (!paths.models.empty() && std::filesystem::exists(paths.models)) {
    for_each_record(paths.models, [&](std::size_t, const json& j) {
      corpus.declare_model(require<std::string>(j, "model_id"));
    });
  }
  for_each_record(paths.tasks, [&](std::size_t, const json& j) { corpus.add_task(task_from_json(j)); });
  for_each_record(paths.variants,
                  [&](std::size_t, const json& j) { corpus.add_variant(variant_from_json(j)); });
  if (!paths.outcomes.empty() && std::filesystem::exists(paths.outcomes)) {
    for_each_record(paths.outcomes,
                    [&](std::size_t, const json& j) { corpus.add_outcome(outcome_from_json(j)); });
  }
  try {
    corpus.check_complete();
  } catch (const Error& e) {
    throw RecordError(fmt::format("{}: {}", paths.variants.string(), e.what()));
  }
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(fmt::format("corpus directory '{}' does not exist", dir.string()));
  }
  return load_corpus(CorpusPaths::in_directory(dir));
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto paths = CorpusPaths::in_directory(dir);
  auto dump = [](const auto& items) {
    std::vector<json> out;
    out.reserve(items.size());
    for (const auto& item : items) out.push_back(to_json(item));
    return out;
  };
  write_records(paths.tasks, dump(corpus.tasks()));
  write_records(paths.variants, dump(corpus.variants()));
  write_records(paths.outcomes, dump(corpus.outcomes()));
  if (!corpus.models().empty()) {
    std::vector<json> models;
    for (const auto& m : corpus.models()) models.push_back({{"model_id", m}});
    write_records(paths.models, models);
  }
}

IngestReport ingest_outcomes(const std::filesystem::path& path, Corpus& corpus) {
  IngestReport report;
  for_each_record(path, [&](std::size_t line, const json& j) {
    try {
      corpus.add_outcome(outcome_from_json(j));
      ++report.accepted;
    } catch (const Error& e) {
      report.diagnostics.push_back(fmt::format("{}:{}: rejected: {}", path.string(), line, e.what()));
    }
  });
  return report;
}

const char* const kAugmentationInstruction =
    "Rewrite the following hardware design task description. Preserve all functional "
    "requirements, module names, port names, and widths exactly. Vary the linguistic "
    "formulation, technical vocabulary, abstraction level, and presentation style. Output only "
    "the rewritten description.";

std::string augmentation_prompt(const TaskRecord& task, std::string_view instruction) {
  std::string prompt(instruction);
  prompt += "\n\nTask description:\n";
  prompt += task.description;
  if (task.reference_solution) {
    prompt += "\n\nReference solution:\n";
    prompt += *task.reference_solution;
  }
  return prompt;
}

namespace {

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

std::vector<VariantRecord> augment_variants(const TaskRecord& task, int n_variants,
                                            TextGenerator& backend, std::string_view instruction) {
  if (n_variants < 1) throw Error("n_variants must be at least 1");
  const std::string prompt = augmentation_prompt(task, instruction);
  std::vector<VariantRecord> out;
  out.reserve(static_cast<std::size_t>(n_variants));
  for (int i = 1; i <= n_variants; ++i) {
    std::string text = trim(backend.complete(prompt));
    if (text.empty()) text = trim(backend.complete(prompt));
    if (text.empty()) {
      throw Error(fmt::format("backend returned an empty rewrite for task '{}' variant {}",
                              task.task_id, i));
    }
    out.push_back({fmt::format("{}_v{}", task.task_id, i), task.task_id, i, std::move(text)});
  }
  return out;
}

std::vector<std::string> lex_tokens(std::string_view source) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  std::size_t i = 0;
  while (i < source.size()) {
    char c = source[i];
    if (c == '/' && i + 1 < source.size() && source[i + 1] == '/') {
      flush();
      while (i < source.size() && source[i] != '\n') ++i;
      continue;
    }
    if (c == '/' && i + 1 < source.size() && source[i + 1] == '*') {
      flush();
      auto end = source.find("*/", i + 2);
      i = end == std::string_view::npos ? source.size() : end + 2;
      continue;
    }
    auto uc = static_cast<unsigned char>(c);
    if (std::isalnum(uc) || c == '_' || c == '$' || uc >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(uc)));
    } else {
      flush();
    }
    ++i;
  }
  flush();
  return tokens;
}

namespace {

std::set<std::vector<std::string>> gram_set(const std::vector<std::string>& tokens, std::size_t k) {
  std::set<std::vector<std::string>> grams;
  if (tokens.empty()) return grams;
  if (tokens.size() < k) {
    grams.insert(tokens);
    return grams;
  }
  for (std::size_t i = 0; i + k <= tokens.size(); ++i) {
    grams.emplace(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                  tokens.begin() + static_cast<std::ptrdiff_t>(i + k));
  }
  return grams;
}

}  // namespace

double structural_similarity_fallback(std::string_view generated, std::string_view reference,
                                      int k) {
  if (k < 1) throw Error("k must be at least 1");
  auto a = gram_set(lex_tokens(generated), static_cast<std::size_t>(k));
  auto b = gram_set(lex_tokens(reference), static_cast<std::size_t>(k));
  if (a.empty() && b.empty()) return 1.0;
  std::size_t common = 0;
  for (const auto& g : a) common += b.count(g);
  const std::size_t uni = a.size() + b.size() - common;
  return static_cast<double>(common) / static_cast<double>(uni);
}

}  // namespace veridispatch
