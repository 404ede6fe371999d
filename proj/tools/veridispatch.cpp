#include <fmt/format.h>

#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "veridispatch/classifier.hpp"
#include "veridispatch/corpus.hpp"
#include "veridispatch/difficulty.hpp"
#include "veridispatch/dispatch.hpp"
#include "veridispatch/embedding.hpp"
#include "veridispatch/eval.hpp"
#include "veridispatch/service.hpp"

using namespace veridispatch;
namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("cannot open '{}'", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

struct Task {
  std::string task_id;
  std::string text;
};

// Records with "description" (or "task") and an optional "task_id".
std::vector<Task> load_task_file(const fs::path& path) {
  std::vector<Task> tasks;
  for_each_record(path, [&](std::size_t, const json& j) {
    Task t;
    t.task_id = j.value("task_id", "");
    if (j.contains("description")) {
      t.text = require<std::string>(j, "description");
    } else {
      t.text = require<std::string>(j, "task");
    }
    if (t.text.empty()) throw Error("empty task text");
    tasks.push_back(std::move(t));
  });
  return tasks;
}

int run_ingest(const fs::path& tasks, const fs::path& variants, const fs::path& outcomes,
               const fs::path& models, const fs::path& out) {
  Corpus corpus = load_corpus(CorpusPaths{tasks, variants, {}, models});
  auto report = ingest_outcomes(outcomes, corpus);
  for (const auto& d : report.diagnostics) std::cerr << d << '\n';
  save_corpus(corpus, out);
  fmt::print("accepted {} outcomes, rejected {}\n", report.accepted, report.diagnostics.size());
  return 0;
}

int run_augment(const fs::path& tasks_path, int n, const std::string& backend_url, const std::string& model,
                const std::string& auth_env, const fs::path& instruction_file, const fs::path& out) {
  std::vector<TaskRecord> tasks;
  for_each_record(tasks_path, [&](std::size_t, const json& j) { tasks.push_back(task_from_json(j)); });
  const std::string instruction =
      instruction_file.empty() ? std::string(kAugmentationInstruction) : read_text(instruction_file);
  BackendClient backend(backend_url, model, HttpOptions{.auth_env = auth_env});
  std::vector<json> records;
  for (const auto& t : tasks) {
    records.push_back(to_json(VariantRecord{t.task_id + "_v0", t.task_id, 0, t.description}));
    for (const auto& v : augment_variants(t, n, backend, instruction)) records.push_back(to_json(v));
  }
  ensure_parent(out);
  write_records(out, records);
  fmt::print("wrote {} variants for {} tasks\n", records.size(), tasks.size());
  return 0;
}

int run_embed(const std::string& kind, double decay, const fs::path& matrices, const std::string& source_model,
              const std::string& endpoint, const std::string& provider_model, const fs::path& variants,
              const std::string& auth_env, const fs::path& out) {
  std::vector<EmbeddingVector> result;
  const PoolingKind pk = pooling_kind_from_string(kind);
  if (pk == PoolingKind::external) {
    if (endpoint.empty() || provider_model.empty() || variants.empty()) {
      throw Error("external embeddings need --endpoint, --provider-model and --variants");
    }
    std::vector<std::string> ids, texts;
    for_each_record(variants, [&](std::size_t, const json& j) {
      auto v = variant_from_json(j);
      ids.push_back(v.variant_id);
      texts.push_back(v.description);
    });
    auto source = EmbeddingSource::external(provider_model, endpoint);
    result = fetch_external(texts, source, HttpOptions{.auth_env = auth_env});
    for (std::size_t i = 0; i < result.size(); ++i) result[i].variant_id = ids[i];
  } else {
    if (matrices.empty()) throw Error("pooled embeddings need --matrices");
    EmbeddingSource source = pk == PoolingKind::decay ? EmbeddingSource::decay(decay)
                             : pk == PoolingKind::average ? EmbeddingSource::average()
                                                           : EmbeddingSource::last_token();
    source.validate();
    std::set<std::string> seen;
    for (const auto& m : import_token_matrices(matrices)) {
      if (!source_model.empty() && m.source_model_id != source_model) continue;
      if (!seen.insert(m.variant_id).second) {
        throw Error(fmt::format("variant '{}' has matrices from several models; pass --source-model",
                                m.variant_id));
      }
      result.push_back(pool(m, source));
    }
  }
  ensure_parent(out);
  save_embeddings(out, result);
  fmt::print("wrote {} embeddings\n", result.size());
  return 0;
}

int run_score(const fs::path& corpus_dir, const std::string& model_id, const fs::path& config,
              const fs::path& out) {
  const Corpus corpus = load_corpus(corpus_dir);
  const ScoreConfig cfg = config.empty() ? ScoreConfig{} : score_config_from_json(read_document(config));
  auto set = score_model(corpus, model_id, cfg);
  for (const auto& d : set.diagnostics) std::cerr << d << '\n';
  ensure_parent(out);
  save_labels(out, set.labels);
  std::size_t kept = 0, hard = 0;
  for (const auto& l : set.labels) {
    kept += l.kept ? 1 : 0;
    hard += l.kept && l.label == Difficulty::hard ? 1 : 0;
  }
  fmt::print("{} labels, {} kept ({} hard, {} easy)\n", set.labels.size(), kept, hard, kept - hard);
  return kept ? 0 : 1;
}

std::string single_model(const std::vector<DifficultyLabel>& labels) {
  std::set<std::string> ids;
  for (const auto& l : labels) ids.insert(l.model_id);
  if (ids.size() != 1) throw Error("labels must belong to exactly one model");
  return *ids.begin();
}

int run_train(const fs::path& labels_path, const fs::path& embeddings_path, const fs::path& config,
              std::optional<std::uint64_t> seed, const fs::path& val_split_out, const fs::path& out) {
  const auto labels = load_labels(labels_path);
  const auto model_id = single_model(labels);
  const auto examples = join_examples(labels, load_embeddings(embeddings_path));
  json doc = config.empty() ? json::object() : read_document(config);
  MlpConfig cfg = mlp_config_from_json(doc);
  if (seed) cfg.seed = *seed;
  if (doc.contains("grid")) {
    auto grid = mlp_grid_from_json(doc["grid"], cfg);
    auto result = grid_search(examples, grid);
    for (const auto& row : result.rows) {
      if (row.metrics) {
        fmt::print("grid hidden=({},{}) dropout={} lr={} f1={:.4f} nll={:.4f}\n", row.config.hidden1,
                   row.config.hidden2, row.config.dropout, row.config.learning_rate, row.metrics->val_f1_macro,
                   row.metrics->val_nll);
      } else {
        fmt::print("grid hidden=({},{}) dropout={} lr={} failed: {}\n", row.config.hidden1, row.config.hidden2,
                   row.config.dropout, row.config.learning_rate, row.error);
      }
    }
    cfg = result.best;
  }
  const auto split = stratified_split(examples, cfg.seed);
  auto predictor = train(examples, split, cfg, model_id);
  ensure_parent(out);
  save_predictor(predictor, out);
  if (!val_split_out.empty()) {
    std::set<std::string> val_ids;
    for (auto i : split.validation) val_ids.insert(examples[i].embedding.variant_id);
    std::vector<DifficultyLabel> val;
    for (const auto& l : labels) {
      if (l.kept && val_ids.count(l.variant_id)) val.push_back(l);
    }
    ensure_parent(val_split_out);
    save_labels(val_split_out, val);
  }
  fmt::print("val f1_macro {:.4f}, val nll {:.4f}, {} epochs\n", predictor.train_metrics.val_f1_macro,
             predictor.train_metrics.val_nll, predictor.train_metrics.epochs_run);
  return 0;
}

int run_calibrate(const fs::path& predictor_path, const fs::path& val_labels, const fs::path& embeddings,
                  const fs::path& out) {
  auto predictor = load_predictor(predictor_path);
  const auto examples = join_examples(load_labels(val_labels), load_embeddings(embeddings));
  predictor = calibrate(std::move(predictor), examples);
  ensure_parent(out);
  save_predictor(predictor, out);
  fmt::print("temperature {:.6f}\n", predictor.temperature);
  return 0;
}

int run_dispatch(const fs::path& registry_path, const fs::path& task_file, int k, bool include_commercial,
                 const std::string& combine, const fs::path& embeddings_path, const fs::path& matrices_path,
                 const std::string& embedding_auth_env, bool random, std::uint64_t seed, const fs::path& out) {
  const Registry registry = load_registry(registry_path);
  const auto tasks = load_task_file(task_file);
  DispatchPolicy policy{k, include_commercial, combine_mode_from_string(combine)};

  std::map<std::pair<std::string, std::string>, EmbeddingVector> given;  // (task id, source key)
  if (!embeddings_path.empty()) {
    for (auto& e : load_embeddings(embeddings_path)) given.emplace(std::make_pair(e.variant_id, e.source.key()), e);
  }
  std::map<std::pair<std::string, std::string>, TokenMatrix> matrices;  // (task id, model id)
  if (!matrices_path.empty()) {
    for (auto& m : import_token_matrices(matrices_path)) {
      matrices.emplace(std::make_pair(m.variant_id, m.source_model_id), std::move(m));
    }
  }
  std::map<std::string, std::unique_ptr<EmbeddingClient>> clients;

  std::vector<DispatchDecision> decisions;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& t = tasks[i];
    DispatchDecision d;
    if (random) {
      d = random_dispatch(registry, k, include_commercial, seed + i);
    } else {
      d = dispatch(t.text, registry, policy,
                   [&](const std::string& text, const EmbeddingSource& src, const std::string& model) {
                     if (auto it = given.find({t.task_id, src.key()}); it != given.end()) return it->second;
                     if (src.kind == PoolingKind::external) {
                       auto& client = clients[src.key()];
                       if (!client) {
                         client = std::make_unique<EmbeddingClient>(src, HttpOptions{.auth_env = embedding_auth_env});
                       }
                       return client->fetch({text}).front();
                     }
                     auto it = matrices.find({t.task_id, model});
                     if (it == matrices.end()) {
                       throw Error(fmt::format("no embedding or token matrix for task '{}' and model '{}'",
                                               t.task_id, model));
                     }
                     return pool(it->second, src);
                   });
    }
    d.task_id = t.task_id;
    decisions.push_back(std::move(d));
  }
  ensure_parent(out);
  save_decisions(out, decisions);
  fmt::print("wrote {} decisions\n", decisions.size());
  return 0;
}

int run_eval(const fs::path& registry_path, const fs::path& decisions_path, const fs::path& outcomes_path,
             const std::vector<int>& ks, bool baselines, const fs::path& out) {
  const Registry registry = load_registry(registry_path);
  const auto decisions = load_decisions(decisions_path);
  std::vector<GenerationOutcome> outcomes;
  for_each_record(outcomes_path, [&](std::size_t, const json& j) {
    auto o = outcome_from_json(j);
    validate_outcome(o);
    outcomes.push_back(std::move(o));
  });
  EvalOptions options;
  options.ks = ks;
  options.single_model_baselines = baselines;
  const auto report = evaluate_dispatching(registry, decisions, outcomes, options);
  fs::create_directories(out);
  write_document(out / "report.json", to_json(report));
  std::ofstream(out / "pass_at_k.csv") << pass_at_k_csv(report);
  for (const auto& s : report.strategies) {
    fmt::print("{:<24} solved {:>5}/{}", s.name, s.solved, s.tasks);
    for (const auto& [kk, v] : s.pass_at_k) fmt::print("  pass@{} {:.4f}", kk, v);
    fmt::print("\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Difficulty-aware dispatching of RTL generation tasks to LLMs"};
  app.require_subcommand(1);

  fs::path tasks, variants, outcomes, models, out, config, corpus_dir, labels, embeddings, matrices, predictor,
      val_labels, registry, task_file, decisions, script, instruction_file, val_split_out;
  std::string backend, provider_model, auth_env, source = "average", source_model, endpoint, model_id,
      combine = "single";
  int n = 10, k = 1, port = 0;
  double decay = 0.9;
  std::uint64_t seed = 0;
  bool include_commercial = false, random = false, no_baselines = false;
  std::vector<int> ks{1, 5, 10};

  auto* ingest = app.add_subcommand("ingest", "Validate tasks, variants and outcomes into a corpus directory");
  ingest->add_option("--tasks", tasks)->required();
  ingest->add_option("--variants", variants)->required();
  ingest->add_option("--outcomes", outcomes)->required();
  ingest->add_option("--models", models, "Known model ids, one {\"model_id\"} record per line");
  ingest->add_option("--out", out)->required();

  auto* augment = app.add_subcommand("augment", "Generate task variants through a chat backend");
  augment->add_option("--tasks", tasks)->required();
  augment->add_option("--n", n)->capture_default_str();
  augment->add_option("--backend", backend)->required();
  augment->add_option("--provider-model", provider_model)->required();
  augment->add_option("--auth-env", auth_env, "Environment variable holding the bearer token");
  augment->add_option("--instruction-file", instruction_file, "Replaces the built-in rewrite instruction");
  augment->add_option("--out", out)->required();

  auto* embed = app.add_subcommand("embed", "Pool token matrices or fetch external embeddings");
  embed->add_option("--source", source)->check(CLI::IsMember({"last_token", "average", "decay", "external"}));
  embed->add_option("--decay", decay)->capture_default_str();
  embed->add_option("--matrices", matrices);
  embed->add_option("--source-model", source_model, "Only pool matrices from this model");
  embed->add_option("--endpoint", endpoint);
  embed->add_option("--provider-model", provider_model);
  embed->add_option("--variants", variants, "Variant records whose descriptions are embedded");
  embed->add_option("--auth-env", auth_env);
  embed->add_option("--out", out)->required();

  auto* score = app.add_subcommand("score", "Label variants easy/hard for one model");
  score->add_option("--corpus", corpus_dir)->required();
  score->add_option("--model-id", model_id)->required();
  score->add_option("--config", config);
  score->add_option("--out", out)->required();

  std::optional<std::uint64_t> train_seed;
  auto* train_cmd = app.add_subcommand("train", "Train a difficulty predictor (grid search when configured)");
  train_cmd->add_option("--labels", labels)->required();
  train_cmd->add_option("--embeddings", embeddings)->required();
  train_cmd->add_option("--config", config);
  train_cmd->add_option("--seed", train_seed);
  train_cmd->add_option("--val-split-out", val_split_out, "Write the validation labels here");
  train_cmd->add_option("--out", out)->required();

  auto* calibrate_cmd = app.add_subcommand("calibrate", "Fit the temperature on validation labels");
  calibrate_cmd->add_option("--predictor", predictor)->required();
  calibrate_cmd->add_option("--val-labels", val_labels)->required();
  calibrate_cmd->add_option("--embeddings", embeddings)->required();
  calibrate_cmd->add_option("--out", out)->required();

  auto* dispatch_cmd = app.add_subcommand("dispatch", "Select models for each task");
  dispatch_cmd->add_option("--registry", registry)->required();
  dispatch_cmd->add_option("--task-file", task_file)->required();
  dispatch_cmd->add_option("--top-k", k)->capture_default_str();
  dispatch_cmd->add_flag("--include-commercial", include_commercial);
  dispatch_cmd->add_option("--combine", combine)->check(CLI::IsMember({"single", "mean"}));
  dispatch_cmd->add_option("--embeddings", embeddings, "Precomputed embeddings keyed by task id");
  dispatch_cmd->add_option("--matrices", matrices, "Token matrices keyed by task id and model");
  dispatch_cmd->add_option("--auth-env", auth_env, "Token variable for external embedding endpoints");
  dispatch_cmd->add_flag("--random", random, "Uniform random selection instead of predictors");
  dispatch_cmd->add_option("--seed", seed);
  dispatch_cmd->add_option("--out", out)->required();

  auto* eval = app.add_subcommand("eval", "Score dispatch decisions against outcomes");
  eval->add_option("--registry", registry)->required();
  eval->add_option("--decisions", decisions)->required();
  eval->add_option("--outcomes", outcomes)->required();
  eval->add_option("--ks", ks)->delimiter(',');
  eval->add_flag("--no-baselines", no_baselines, "Skip the single-model strategies");
  eval->add_option("--out", out)->required();

  auto* serve = app.add_subcommand("serve", "Run the dispatch HTTP service");
  serve->add_option("--config", config)->required();

  auto* mock = app.add_subcommand("mock-backend", "Run a scripted chat/embedding backend");
  mock->add_option("--port", port)->required();
  mock->add_option("--script", script)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*ingest) return run_ingest(tasks, variants, outcomes, models, out);
    if (*augment) return run_augment(tasks, n, backend, provider_model, auth_env, instruction_file, out);
    if (*embed) {
      return run_embed(source, decay, matrices, source_model, endpoint, provider_model, variants, auth_env, out);
    }
    if (*score) return run_score(corpus_dir, model_id, config, out);
    if (*train_cmd) return run_train(labels, embeddings, config, train_seed, val_split_out, out);
    if (*calibrate_cmd) return run_calibrate(predictor, val_labels, embeddings, out);
    if (*dispatch_cmd) {
      return run_dispatch(registry, task_file, k, include_commercial, combine, embeddings, matrices, auth_env,
                          random, seed, out);
    }
    if (*eval) return run_eval(registry, decisions, outcomes, ks, !no_baselines, out);
    if (*serve) {
      Service service(load_service_config(config));
      service.run();
      return 0;
    }
    if (*mock) {
      auto backend_mock = MockBackend::from_file(script);
      backend_mock.run("127.0.0.1", port);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
