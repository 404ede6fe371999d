#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "veridispatch/classifier.hpp"

namespace veridispatch {

enum class ModelKind { open_source, commercial };
enum class CombineMode { single, mean };

std::string_view to_string(ModelKind k);
ModelKind model_kind_from_string(std::string_view s);
std::string_view to_string(CombineMode m);
CombineMode combine_mode_from_string(std::string_view s);

/// No enabled model survived the policy filter.
class EmptyPoolError : public Error {
 public:
  using Error::Error;
};

struct ModelProfile {
  std::string model_id;
  ModelKind kind = ModelKind::open_source;
  double cost_per_call = 1.0;
  /// First entry is the designated-best predictor used by CombineMode::single.
  std::vector<std::shared_ptr<const TrainedPredictor>> predictors;
  std::string backend_endpoint;
  std::string provider_model;  // name sent in the "model" field; defaults to model_id
  std::string auth_env;
  bool enabled = true;
};

/// Immutable set of model profiles with unique ids.
class Registry {
 public:
  Registry() = default;
  explicit Registry(std::vector<ModelProfile> models);

  const std::vector<ModelProfile>& models() const { return models_; }
  const ModelProfile* find(std::string_view model_id) const;

  /// Enabled models admitted by the commercial-inclusion flag, in registry order.
  std::vector<const ModelProfile*> candidates(bool include_commercial) const;

  /// Every distinct embedding source any predictor consumes.
  std::vector<EmbeddingSource> sources() const;

 private:
  std::vector<ModelProfile> models_;
};

/// Reads a registry document. Predictor paths are relative to the file.
Registry load_registry(const std::filesystem::path& path);
json registry_to_json(const Registry& r, const std::map<std::string, std::vector<std::string>>& predictor_paths);

/// Embeddings for one task. External sources are keyed by
/// EmbeddingSource::key(); pooled hidden-state sources may be keyed per model
/// ("average@<model_id>") and fall back to the bare source key.
using EmbeddingsBySource = std::map<std::string, EmbeddingVector>;

std::string embedding_key(const EmbeddingSource& source, const std::string& model_id);

/// 1 - prob_hard of the designated predictor (single) or averaged over all
/// predictors (mean).
double success_probability(const ModelProfile& profile, const EmbeddingsBySource& embeddings,
                           CombineMode mode);

struct DispatchPolicy {
  int k = 1;
  bool include_commercial = true;
  CombineMode combine_mode = CombineMode::single;
};

struct RankedModel {
  std::string model_id;
  double success_prob = 0.0;
};

struct DispatchDecision {
  std::string task_id;  // optional, carried through files
  std::string task_hash;
  std::string strategy = "dispatch";
  std::vector<RankedModel> ranked;
  std::vector<std::string> selected;
  DispatchPolicy policy;
  double total_cost = 0.0;
};

json to_json(const DispatchDecision& d);
DispatchDecision decision_from_json(const json& j);
std::vector<DispatchDecision> load_decisions(const std::filesystem::path& path);
void save_decisions(const std::filesystem::path& path, const std::vector<DispatchDecision>& ds);

struct Candidate {
  std::string model_id;
  double success_prob = 0.0;
  double cost_per_call = 0.0;
};

/// Sorts by success probability (descending), then cost (ascending), then
/// model id, and returns the order. Ties never depend on input order.
std::vector<Candidate> rank_candidates(std::vector<Candidate> candidates);

/// Computes the embedding of `task_text` for `source` as seen by `model_id`.
using EmbedFn = std::function<EmbeddingVector(const std::string& task_text, const EmbeddingSource& source,
                                              const std::string& model_id)>;

/// Ranks the admitted models for `task_text` and selects the top k.
DispatchDecision dispatch(const std::string& task_text, const Registry& registry,
                          const DispatchPolicy& policy, const EmbedFn& embed);

/// Same, with embeddings already computed for every required source.
DispatchDecision dispatch(const std::string& task_text, const Registry& registry,
                          const DispatchPolicy& policy, const EmbeddingsBySource& embeddings);

/// Uniform choice of k distinct admitted models.
DispatchDecision random_dispatch(const Registry& registry, int k, bool include_commercial,
                                 std::uint64_t seed);

/// Admitted models that solve the task according to `ground_truth`.
std::set<std::string> oracle_select(const Registry& registry,
                                    const std::map<std::string, bool>& ground_truth,
                                    bool include_commercial = true);

}  // namespace veridispatch
