#include "veridispatch/dispatch.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <random>

namespace veridispatch {

std::string_view to_string(ModelKind k) {
  return k == ModelKind::commercial ? "commercial" : "open_source";
}

ModelKind model_kind_from_string(std::string_view s) {
  if (s == "commercial") return ModelKind::commercial;
  if (s == "open_source") return ModelKind::open_source;
  throw Error(fmt::format("unknown model kind '{}'", s));
}

std::string_view to_string(CombineMode m) { return m == CombineMode::mean ? "mean" : "single"; }

CombineMode combine_mode_from_string(std::string_view s) {
  if (s == "mean") return CombineMode::mean;
  if (s == "single") return CombineMode::single;
  throw Error(fmt::format("unknown combine mode '{}'", s));
}

Registry::Registry(std::vector<ModelProfile> models) : models_(std::move(models)) {
  std::set<std::string> seen;
  for (const auto& m : models_) {
    if (m.model_id.empty()) throw Error("registry entry without model_id");
    if (!seen.insert(m.model_id).second) throw Error(fmt::format("duplicate model_id '{}'", m.model_id));
    if (!(m.cost_per_call >= 0.0)) throw Error(fmt::format("model '{}' has a negative cost", m.model_id));
    if (m.predictors.empty()) throw Error(fmt::format("model '{}' has no predictors", m.model_id));
    for (const auto& p : m.predictors) {
      if (!p) throw Error(fmt::format("model '{}' has a null predictor", m.model_id));
      if (p->model_id != m.model_id) {
        throw Error(fmt::format("predictor for '{}' is registered under '{}'", p->model_id, m.model_id));
      }
    }
  }
}

const ModelProfile* Registry::find(std::string_view model_id) const {
  for (const auto& m : models_) {
    if (m.model_id == model_id) return &m;
  }
  return nullptr;
}

std::vector<const ModelProfile*> Registry::candidates(bool include_commercial) const {
  std::vector<const ModelProfile*> out;
  for (const auto& m : models_) {
    if (m.enabled && (include_commercial || m.kind == ModelKind::open_source)) out.push_back(&m);
  }
  return out;
}

std::vector<EmbeddingSource> Registry::sources() const {
  std::vector<EmbeddingSource> out;
  std::set<std::string> seen;
  for (const auto& m : models_) {
    for (const auto& p : m.predictors) {
      if (seen.insert(p->embedding_source.key()).second) out.push_back(p->embedding_source);
    }
  }
  return out;
}

Registry load_registry(const std::filesystem::path& path) {
  const json doc = read_document(path);
  const auto base = path.parent_path();
  std::map<std::string, std::shared_ptr<const TrainedPredictor>> loaded;
  std::vector<ModelProfile> models;
  try {
    for (const auto& entry : require<json>(doc, "models")) {
      ModelProfile m;
      m.model_id = require<std::string>(entry, "model_id");
      m.kind = model_kind_from_string(require<std::string>(entry, "kind"));
      m.cost_per_call = entry.value("cost_per_call", 1.0);
      m.backend_endpoint = entry.value("backend_endpoint", "");
      m.provider_model = entry.value("provider_model", m.model_id);
      m.auth_env = entry.value("auth_env", "");
      m.enabled = entry.value("enabled", true);
      for (const auto& rel : require<std::vector<std::string>>(entry, "predictors")) {
        auto file = base / rel;
        auto key = file.lexically_normal().string();
        auto it = loaded.find(key);
        if (it == loaded.end()) {
          it = loaded.emplace(key, std::make_shared<const TrainedPredictor>(load_predictor(file))).first;
        }
        m.predictors.push_back(it->second);
      }
      models.push_back(std::move(m));
    }
    return Registry(std::move(models));
  } catch (const Error& e) {
    throw Error(fmt::format("{}: {}", path.string(), e.what()));
  }
}

json registry_to_json(const Registry& r,
                      const std::map<std::string, std::vector<std::string>>& predictor_paths) {
  json models = json::array();
  for (const auto& m : r.models()) {
    auto it = predictor_paths.find(m.model_id);
    models.push_back({{"model_id", m.model_id},
                      {"kind", to_string(m.kind)},
                      {"cost_per_call", m.cost_per_call},
                      {"backend_endpoint", m.backend_endpoint},
                      {"provider_model", m.provider_model},
                      {"auth_env", m.auth_env},
                      {"enabled", m.enabled},
                      {"predictors", it == predictor_paths.end() ? std::vector<std::string>{} : it->second}});
  }
  return {{"models", models}};
}

std::string embedding_key(const EmbeddingSource& source, const std::string& model_id) {
  if (source.kind == PoolingKind::external) return source.key();
  return source.key() + "@" + model_id;
}

double success_probability(const ModelProfile& profile, const EmbeddingsBySource& embeddings,
                           CombineMode mode) {
  if (profile.predictors.empty()) throw Error(fmt::format("model '{}' has no predictors", profile.model_id));
  auto one = [&](const TrainedPredictor& p) {
    auto it = embeddings.find(embedding_key(p.embedding_source, profile.model_id));
    if (it == embeddings.end()) it = embeddings.find(p.embedding_source.key());
    if (it == embeddings.end()) {
      throw Error(fmt::format("missing embedding for source '{}' (model '{}')",
                              p.embedding_source.key(), profile.model_id));
    }
    return 1.0 - forward(p, it->second).prob_hard;
  };
  if (mode == CombineMode::single) return one(*profile.predictors.front());
  double sum = 0.0;
  for (const auto& p : profile.predictors) sum += one(*p);
  return sum / static_cast<double>(profile.predictors.size());
}

json to_json(const DispatchDecision& d) {
  json ranked = json::array();
  for (const auto& r : d.ranked) ranked.push_back({{"model_id", r.model_id}, {"success_prob", r.success_prob}});
  json j{{"task_hash", d.task_hash},
         {"strategy", d.strategy},
         {"ranked", ranked},
         {"selected", d.selected},
         {"policy",
          {{"k", d.policy.k},
           {"include_commercial", d.policy.include_commercial},
           {"combine_mode", to_string(d.policy.combine_mode)}}},
         {"total_cost", d.total_cost}};
  if (!d.task_id.empty()) j["task_id"] = d.task_id;
  return j;
}

DispatchDecision decision_from_json(const json& j) {
  DispatchDecision d;
  d.task_id = j.value("task_id", "");
  d.task_hash = j.value("task_hash", "");
  d.strategy = j.value("strategy", "dispatch");
  for (const auto& r : require<json>(j, "ranked")) {
    d.ranked.push_back({require<std::string>(r, "model_id"), require<double>(r, "success_prob")});
  }
  d.selected = require<std::vector<std::string>>(j, "selected");
  const auto& p = require<json>(j, "policy");
  d.policy.k = require<int>(p, "k");
  d.policy.include_commercial = require<bool>(p, "include_commercial");
  d.policy.combine_mode = combine_mode_from_string(p.value("combine_mode", "single"));
  d.total_cost = require<double>(j, "total_cost");
  return d;
}

std::vector<DispatchDecision> load_decisions(const std::filesystem::path& path) {
  std::vector<DispatchDecision> out;
  for_each_record(path, [&](std::size_t, const json& j) { out.push_back(decision_from_json(j)); });
  return out;
}

void save_decisions(const std::filesystem::path& path, const std::vector<DispatchDecision>& ds) {
  std::vector<json> records;
  records.reserve(ds.size());
  for (const auto& d : ds) records.push_back(to_json(d));
  write_records(path, records);
}

std::vector<Candidate> rank_candidates(std::vector<Candidate> candidates) {
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.success_prob != b.success_prob) return a.success_prob > b.success_prob;
    if (a.cost_per_call != b.cost_per_call) return a.cost_per_call < b.cost_per_call;
    return a.model_id < b.model_id;
  });
  return candidates;
}

namespace {

DispatchDecision decide(const std::string& task_text, const Registry& registry,
                        const DispatchPolicy& policy,
                        const std::function<double(const ModelProfile&)>& prob_of) {
  if (policy.k < 1) throw Error("k must be at least 1");
  auto pool = registry.candidates(policy.include_commercial);
  if (pool.empty()) throw EmptyPoolError("no enabled model survives the policy filter");

  std::vector<Candidate> candidates;
  for (const auto* m : pool) candidates.push_back({m->model_id, prob_of(*m), m->cost_per_call});
  candidates = rank_candidates(std::move(candidates));

  DispatchDecision d;
  d.task_hash = fnv1a_hex(task_text);
  d.policy = policy;
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(policy.k), candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    d.ranked.push_back({candidates[i].model_id, candidates[i].success_prob});
    if (i < take) {
      d.selected.push_back(candidates[i].model_id);
      d.total_cost += candidates[i].cost_per_call;
    }
  }
  return d;
}

}  // namespace

DispatchDecision dispatch(const std::string& task_text, const Registry& registry,
                          const DispatchPolicy& policy, const EmbeddingsBySource& embeddings) {
  return decide(task_text, registry, policy, [&](const ModelProfile& m) {
    return success_probability(m, embeddings, policy.combine_mode);
  });
}

DispatchDecision dispatch(const std::string& task_text, const Registry& registry,
                          const DispatchPolicy& policy, const EmbedFn& embed) {
  if (policy.k < 1) throw Error("k must be at least 1");
  auto pool = registry.candidates(policy.include_commercial);
  if (pool.empty()) throw EmptyPoolError("no enabled model survives the policy filter");
  EmbeddingsBySource embeddings;
  for (const auto* m : pool) {
    const std::size_t used = policy.combine_mode == CombineMode::single ? 1 : m->predictors.size();
    for (std::size_t i = 0; i < used; ++i) {
      const auto& src = m->predictors[i]->embedding_source;
      auto key = embedding_key(src, m->model_id);
      if (!embeddings.count(key)) embeddings.emplace(key, embed(task_text, src, m->model_id));
    }
  }
  return dispatch(task_text, registry, policy, embeddings);
}

DispatchDecision random_dispatch(const Registry& registry, int k, bool include_commercial,
                                 std::uint64_t seed) {
  if (k < 1) throw Error("k must be at least 1");
  auto pool = registry.candidates(include_commercial);
  if (pool.empty()) throw EmptyPoolError("no enabled model survives the policy filter");

  std::mt19937_64 rng(seed);
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), pool.size());
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }

  DispatchDecision d;
  d.strategy = "random";
  d.policy = {k, include_commercial, CombineMode::single};
  const double uniform = 1.0 / static_cast<double>(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    d.ranked.push_back({pool[i]->model_id, uniform});
    if (i < take) {
      d.selected.push_back(pool[i]->model_id);
      d.total_cost += pool[i]->cost_per_call;
    }
  }
  return d;
}

std::set<std::string> oracle_select(const Registry& registry,
                                    const std::map<std::string, bool>& ground_truth,
                                    bool include_commercial) {
  std::set<std::string> solved;
  for (const auto* m : registry.candidates(include_commercial)) {
    auto it = ground_truth.find(m->model_id);
    if (it == ground_truth.end()) {
      throw Error(fmt::format("no ground truth for model '{}'", m->model_id));
    }
    if (it->second) solved.insert(m->model_id);
  }
  return solved;
}

}  // namespace veridispatch
