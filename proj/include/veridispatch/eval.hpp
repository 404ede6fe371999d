#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "veridispatch/corpus.hpp"
#include "veridispatch/dispatch.hpp"
#include "veridispatch/metrics.hpp"

namespace veridispatch {

struct StrategyReport {
  std::string name;
  std::size_t tasks = 0;
  std::map<int, double> pass_at_k;
  std::size_t solved = 0;
  double commercial_fraction = 0.0;
  std::map<std::string, std::size_t> selections;
  std::optional<double> pearson_r;  // unset when a side has zero variance
};

struct ClassifierSummary {
  double f1_macro = 0.0;
  double accuracy = 0.0;
  double nll = 0.0;
  int epochs_run = 0;
  double temperature = 1.0;
};

struct EvalReport {
  std::vector<int> ks;
  std::vector<StrategyReport> strategies;
  std::map<std::string, std::size_t> standalone_solved;  // capability per model
  std::map<std::string, ClassifierSummary> classifiers;

  const StrategyReport* find(std::string_view strategy) const;
};

json to_json(const EvalReport& r);
/// strategy,k,pass_at_k rows.
std::string pass_at_k_csv(const EvalReport& r);

struct EvalOptions {
  std::vector<int> ks{1, 5, 10};
  /// Adds a "model:<id>" strategy per enabled model that always selects it.
  bool single_model_baselines = true;
};

/// Scores dispatch decisions against ground-truth generation outcomes.
///
/// Decisions are grouped by their strategy name; each decision's task_id
/// names the evaluation item (the outcome variant_id). A task counts as
/// solved when any selected model has a functionally correct sample; pass@k
/// pools the samples of every selected model.
EvalReport evaluate_dispatching(const Registry& registry, std::span<const DispatchDecision> decisions,
                                std::span<const GenerationOutcome> outcomes,
                                const EvalOptions& options = {});

struct BenchmarkTokenStats {
  std::size_t tasks = 0;
  double avg_question_tokens = 0.0;
  double avg_reference_tokens = 0.0;
  std::size_t references = 0;
  bool has_references() const { return references > 0; }
};

/// Average lexer token counts of task descriptions and reference solutions.
std::map<Benchmark, BenchmarkTokenStats> corpus_token_stats(const Corpus& corpus);

}  // namespace veridispatch
