#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "veridispatch/common.hpp"

namespace veridispatch {

enum class Benchmark { rtllm, verilogeval, custom };

std::string_view to_string(Benchmark b);
Benchmark benchmark_from_string(std::string_view s);

struct TaskRecord {
  std::string task_id;
  Benchmark benchmark = Benchmark::custom;
  std::string description;
  std::optional<std::string> reference_solution;
};

/// A rephrasing of a task. Index 0 is the original wording.
struct VariantRecord {
  std::string variant_id;
  std::string task_id;
  int variant_index = 0;
  std::string description;
};

/// Verification verdicts for one generation attempt.
struct GenerationOutcome {
  std::string variant_id;
  std::string model_id;
  int sample_index = 0;
  bool syntax_ok = false;
  double structural_similarity = 0.0;
  bool functional_ok = false;
  std::optional<std::string> generated_source;
};

json to_json(const TaskRecord& t);
json to_json(const VariantRecord& v);
json to_json(const GenerationOutcome& o);
TaskRecord task_from_json(const json& j);
VariantRecord variant_from_json(const json& j);
GenerationOutcome outcome_from_json(const json& j);

/// Field-level invariants of a single outcome; throws Error.
void validate_outcome(const GenerationOutcome& o);

/// Tasks, variants, and outcomes with cross references checked.
///
/// `models` lists the model ids outcomes may refer to. When empty, any
/// model id is accepted.
class Corpus {
 public:
  const std::vector<TaskRecord>& tasks() const { return tasks_; }
  const std::vector<VariantRecord>& variants() const { return variants_; }
  const std::vector<GenerationOutcome>& outcomes() const { return outcomes_; }
  const std::set<std::string>& models() const { return models_; }

  const TaskRecord* find_task(std::string_view task_id) const;
  const VariantRecord* find_variant(std::string_view variant_id) const;

  /// Outcomes of one model, grouped by variant id in variant order.
  std::map<std::string, std::vector<GenerationOutcome>> outcomes_by_variant(
      std::string_view model_id) const;

  void add_task(TaskRecord t);
  void add_variant(VariantRecord v);
  void add_outcome(GenerationOutcome o);
  void declare_model(std::string model_id);

  /// Checks that every task has its index-0 variant with the same text.
  void check_complete() const;

 private:
  std::vector<TaskRecord> tasks_;
  std::vector<VariantRecord> variants_;
  std::vector<GenerationOutcome> outcomes_;
  std::set<std::string> models_;
  std::map<std::string, std::size_t, std::less<>> task_index_;
  std::map<std::string, std::size_t, std::less<>> variant_index_;
  std::set<std::tuple<std::string, std::string, int>> outcome_keys_;
};

struct CorpusPaths {
  std::filesystem::path tasks;
  std::filesystem::path variants;
  std::filesystem::path outcomes;
  std::filesystem::path models;  // optional; one {"model_id": ...} per line

  /// Conventional file names inside a corpus directory.
  static CorpusPaths in_directory(const std::filesystem::path& dir);
};

Corpus load_corpus(const CorpusPaths& paths);
Corpus load_corpus(const std::filesystem::path& dir);
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);

struct IngestReport {
  std::size_t accepted = 0;
  std::vector<std::string> diagnostics;
};

/// Appends valid outcomes from `path`; invalid records are skipped and
/// reported instead of aborting the whole file.
IngestReport ingest_outcomes(const std::filesystem::path& path, Corpus& corpus);

/// Something that turns a prompt into text (an LLM backend or a test double).
class TextGenerator {
 public:
  virtual ~TextGenerator() = default;
  virtual std::string complete(const std::string& prompt) = 0;
};

extern const char* const kAugmentationInstruction;

std::string augmentation_prompt(const TaskRecord& task,
                                std::string_view instruction = kAugmentationInstruction);

/// Produces `n_variants` rewrites with indices 1..n_variants. An empty
/// rewrite is retried once before failing.
std::vector<VariantRecord> augment_variants(const TaskRecord& task, int n_variants,
                                            TextGenerator& backend,
                                            std::string_view instruction = kAugmentationInstruction);

/// Lowercased identifier/number tokens with // and /* */ comments removed.
std::vector<std::string> lex_tokens(std::string_view source);

/// Jaccard similarity between the k-gram sets of the two token streams.
/// A stream shorter than k contributes its whole token sequence as one gram.
double structural_similarity_fallback(std::string_view generated, std::string_view reference,
                                      int k);

}  // namespace veridispatch
