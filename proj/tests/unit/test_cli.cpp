#include <cstdlib>

#include "support.hpp"
#include "synthetic.hpp"

using namespace veridispatch;
using support::TempDir;

namespace {

int cli(const std::string& args, const TempDir& dir) {
  const std::string cmd = std::string("\"") + VERIDISPATCH_CLI + "\" " + args + " >>\"" + (dir / "log.txt").string() +
                          "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string q(const std::filesystem::path& p) { return "\"" + p.string() + "\""; }

}  // namespace

TEST_CASE("command line pipeline") {
  TempDir dir;
  synthetic::Options opt;
  opt.tasks = 60;
  opt.dim = 4;
  const auto bench = synthetic::make_bench(opt);

  std::vector<json> tasks, variants, outcomes, models, task_file;
  for (const auto& t : bench.corpus.tasks()) tasks.push_back(to_json(t));
  for (const auto& v : bench.corpus.variants()) {
    variants.push_back(to_json(v));
    if (v.variant_index == 0) task_file.push_back({{"task_id", v.variant_id}, {"description", v.description}});
  }
  for (const auto& o : bench.corpus.outcomes()) outcomes.push_back(to_json(o));
  for (const auto& m : synthetic::model_ids()) models.push_back({{"model_id", m}});
  write_records(dir / "tasks.in.jsonl", tasks);
  write_records(dir / "variants.in.jsonl", variants);
  write_records(dir / "outcomes.in.jsonl", outcomes);
  write_records(dir / "models.in.jsonl", models);
  write_records(dir / "eval_tasks.jsonl", task_file);
  save_embeddings(dir / "embeddings.jsonl", bench.embeddings);
  write_document(dir / "mlp.json", json::parse(R"({"hidden_sizes":[16,8],"dropout":0.0,"learning_rate":0.05,
    "max_epochs":60,"patience":10,"batch_size":16})"));

  REQUIRE(cli("ingest --tasks " + q(dir / "tasks.in.jsonl") + " --variants " + q(dir / "variants.in.jsonl") +
                  " --outcomes " + q(dir / "outcomes.in.jsonl") + " --models " + q(dir / "models.in.jsonl") +
                  " --out " + q(dir / "corpus"),
              dir) == 0);
  CHECK(load_corpus(dir / "corpus").outcomes().size() == outcomes.size());

  json registry{{"models", json::array()}};
  for (const auto& m : synthetic::model_ids()) {
    REQUIRE(cli("score --corpus " + q(dir / "corpus") + " --model-id " + m + " --out " + q(dir / (m + ".labels.jsonl")),
                dir) == 0);
    REQUIRE(cli("train --labels " + q(dir / (m + ".labels.jsonl")) + " --embeddings " + q(dir / "embeddings.jsonl") +
                    " --config " + q(dir / "mlp.json") + " --seed 3 --val-split-out " + q(dir / (m + ".val.jsonl")) +
                    " --out " + q(dir / (m + ".raw.json")),
                dir) == 0);
    REQUIRE(cli("calibrate --predictor " + q(dir / (m + ".raw.json")) + " --val-labels " + q(dir / (m + ".val.jsonl")) +
                    " --embeddings " + q(dir / "embeddings.jsonl") + " --out " + q(dir / (m + ".json")),
                dir) == 0);
    registry["models"].push_back({{"model_id", m}, {"kind", "open_source"}, {"predictors", {m + ".json"}}});
  }
  write_document(dir / "registry.json", registry);

  REQUIRE(cli("dispatch --registry " + q(dir / "registry.json") + " --task-file " + q(dir / "eval_tasks.jsonl") +
                  " --top-k 1 --embeddings " + q(dir / "embeddings.jsonl") + " --out " + q(dir / "decisions.jsonl"),
              dir) == 0);
  const auto decisions = load_decisions(dir / "decisions.jsonl");
  REQUIRE(decisions.size() == 60);
  std::size_t correct = 0;
  for (const auto& d : decisions) {
    correct += d.selected.front() == synthetic::strong_model(bench.cluster.at(d.task_id));
  }
  CHECK(correct >= 54);

  REQUIRE(cli("eval --registry " + q(dir / "registry.json") + " --decisions " + q(dir / "decisions.jsonl") +
                  " --outcomes " + q(dir / "outcomes.in.jsonl") + " --ks 1,5 --out " + q(dir / "report"),
              dir) == 0);
  const auto report = read_document(dir / "report" / "report.json");
  CHECK(report.dump().find("model:model_a") != std::string::npos);
  CHECK(support::slurp(dir / "report" / "pass_at_k.csv").rfind("strategy,k,pass_at_k\n", 0) == 0);

  // Bad input exits 1 with a message.
  CHECK(cli("score --corpus " + q(dir / "missing") + " --model-id x --out " + q(dir / "x.jsonl"), dir) == 1);
  CHECK(support::slurp(dir / "log.txt").find("error: ") != std::string::npos);
}
