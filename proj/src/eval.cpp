#include "veridispatch/eval.hpp"

#include <fmt/format.h>

#include <set>

namespace veridispatch {

const StrategyReport* EvalReport::find(std::string_view strategy) const {
  for (const auto& s : strategies) {
    if (s.name == strategy) return &s;
  }
  return nullptr;
}

json to_json(const EvalReport& r) {
  json strategies = json::array();
  for (const auto& s : r.strategies) {
    json pass = json::object();
    for (const auto& [k, v] : s.pass_at_k) pass[std::to_string(k)] = v;
    strategies.push_back({{"name", s.name},
                          {"tasks", s.tasks},
                          {"pass_at_k", pass},
                          {"solved", s.solved},
                          {"commercial_fraction", s.commercial_fraction},
                          {"selections", s.selections},
                          {"pearson_r", s.pearson_r ? json(*s.pearson_r) : json(nullptr)}});
  }
  json classifiers = json::object();
  for (const auto& [id, c] : r.classifiers) {
    classifiers[id] = {{"f1_macro", c.f1_macro}, {"accuracy", c.accuracy}, {"nll", c.nll}, {"epochs_run", c.epochs_run},
                       {"temperature", c.temperature}};
  }
  return {{"ks", r.ks},
          {"strategies", strategies},
          {"standalone_solved", r.standalone_solved},
          {"classifiers", classifiers}};
}

std::string pass_at_k_csv(const EvalReport& r) {
  std::string out = "strategy,k,pass_at_k\n";
  for (const auto& s : r.strategies) {
    for (const auto& [k, v] : s.pass_at_k) out += fmt::format("{},{},{:.6f}\n", s.name, k, v);
  }
  return out;
}

namespace {

struct SampleCount {
  int n = 0;
  int correct = 0;
};

using Coverage = std::map<std::pair<std::string, std::string>, SampleCount>;  // (task, model)

const SampleCount& lookup(const Coverage& cov, const std::string& task, const std::string& model) {
  auto it = cov.find({task, model});
  if (it == cov.end()) {
    throw Error(fmt::format("missing outcome coverage for task '{}' and model '{}'", task, model));
  }
  return it->second;
}

StrategyReport score_strategy(const std::string& name, const Registry& registry,
                              const std::vector<const DispatchDecision*>& decisions,
                              const Coverage& cov, const std::vector<int>& ks,
                              const std::map<std::string, std::size_t>& capability) {
  StrategyReport s;
  s.name = name;
  s.tasks = decisions.size();
  for (int k : ks) s.pass_at_k[k] = 0.0;
  std::size_t commercial = 0, total = 0;
  for (const auto& [id, _] : capability) s.selections[id] = 0;

  for (const auto* d : decisions) {
    SampleCount pooled;
    bool solved = false;
    for (const auto& model : d->selected) {
      const auto* profile = registry.find(model);
      if (!profile) throw Error(fmt::format("decision selects unknown model '{}'", model));
      const auto& c = lookup(cov, d->task_id, model);
      pooled.n += c.n;
      pooled.correct += c.correct;
      solved = solved || c.correct > 0;
      ++s.selections[model];
      ++total;
      commercial += profile->kind == ModelKind::commercial ? 1 : 0;
    }
    if (solved) ++s.solved;
    if (pooled.n == 0) throw Error(fmt::format("decision for task '{}' selects no model", d->task_id));
    for (int k : ks) s.pass_at_k[k] += pass_at_k(pooled.n, pooled.correct, std::min(k, pooled.n));
  }
  if (s.tasks > 0) {
    for (auto& [k, v] : s.pass_at_k) v /= static_cast<double>(s.tasks);
  }
  s.commercial_fraction = total ? static_cast<double>(commercial) / static_cast<double>(total) : 0.0;

  std::vector<double> cap, freq;
  for (const auto& [id, solved] : capability) {
    cap.push_back(static_cast<double>(solved));
    freq.push_back(total ? static_cast<double>(s.selections[id]) / static_cast<double>(total) : 0.0);
  }
  try {
    s.pearson_r = pearson_r(cap, freq);
  } catch (const Error&) {
    s.pearson_r.reset();
  }
  return s;
}

}  // namespace

EvalReport evaluate_dispatching(const Registry& registry, std::span<const DispatchDecision> decisions,
                                std::span<const GenerationOutcome> outcomes, const EvalOptions& options) {
  for (int k : options.ks) {
    if (k < 1) throw Error("pass@k needs k >= 1");
  }
  Coverage cov;
  for (const auto& o : outcomes) {
    auto& c = cov[{o.variant_id, o.model_id}];
    ++c.n;
    c.correct += o.functional_ok ? 1 : 0;
  }

  EvalReport report;
  report.ks = options.ks;

  std::vector<std::string> task_order;
  std::set<std::string> seen_tasks;
  std::vector<std::string> strategy_order;
  std::map<std::string, std::vector<const DispatchDecision*>> by_strategy;
  for (const auto& d : decisions) {
    if (d.task_id.empty()) throw Error("decision without task_id cannot be evaluated");
    if (seen_tasks.insert(d.task_id).second) task_order.push_back(d.task_id);
    auto& bucket = by_strategy[d.strategy];
    if (bucket.empty()) strategy_order.push_back(d.strategy);
    bucket.push_back(&d);
  }

  for (const auto& m : registry.models()) {
    if (!m.enabled) continue;
    std::size_t solved = 0;
    for (const auto& t : task_order) solved += lookup(cov, t, m.model_id).correct > 0 ? 1 : 0;
    report.standalone_solved[m.model_id] = solved;
    const auto& p = *m.predictors.front();
    report.classifiers[m.model_id] = {p.train_metrics.val_f1_macro, p.train_metrics.val_accuracy,
                                      p.train_metrics.val_nll, p.train_metrics.epochs_run, p.temperature};
  }

  for (const auto& name : strategy_order) {
    const auto& ds = by_strategy[name];
    std::set<std::string> tasks;
    for (const auto* d : ds) {
      if (!tasks.insert(d->task_id).second) {
        throw Error(fmt::format("strategy '{}' has two decisions for task '{}'", name, d->task_id));
      }
    }
    report.strategies.push_back(
        score_strategy(name, registry, ds, cov, options.ks, report.standalone_solved));
  }

  if (options.single_model_baselines) {
    std::vector<DispatchDecision> synthetic;
    for (const auto& m : registry.models()) {
      if (!m.enabled) continue;
      synthetic.clear();
      for (const auto& t : task_order) {
        DispatchDecision d;
        d.task_id = t;
        d.strategy = "model:" + m.model_id;
        d.selected = {m.model_id};
        d.total_cost = m.cost_per_call;
        synthetic.push_back(std::move(d));
      }
      std::vector<const DispatchDecision*> ptrs;
      for (const auto& d : synthetic) ptrs.push_back(&d);
      report.strategies.push_back(score_strategy("model:" + m.model_id, registry, ptrs, cov,
                                                 options.ks, report.standalone_solved));
    }
  }
  return report;
}

std::map<Benchmark, BenchmarkTokenStats> corpus_token_stats(const Corpus& corpus) {
  std::map<Benchmark, BenchmarkTokenStats> stats;
  std::map<Benchmark, double> question_sum, reference_sum;
  for (const auto& t : corpus.tasks()) {
    auto& s = stats[t.benchmark];
    ++s.tasks;
    question_sum[t.benchmark] += static_cast<double>(lex_tokens(t.description).size());
    if (t.reference_solution && !t.reference_solution->empty()) {
      ++s.references;
      reference_sum[t.benchmark] += static_cast<double>(lex_tokens(*t.reference_solution).size());
    }
  }
  for (auto& [b, s] : stats) {
    s.avg_question_tokens = question_sum[b] / static_cast<double>(s.tasks);
    s.avg_reference_tokens = s.references ? reference_sum[b] / static_cast<double>(s.references) : 0.0;
  }
  return stats;
}

}  // namespace veridispatch
