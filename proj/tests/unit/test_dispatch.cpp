#include "fixtures.hpp"
#include "support.hpp"
#include "veridispatch/dispatch.hpp"

using namespace veridispatch;
using fixtures::profile;

namespace {

const EmbeddingSource kSource = EmbeddingSource::average();

EmbeddingsBySource embeddings_for(int dim = 4) {
  return {{kSource.key(), {"task", kSource, Eigen::VectorXd::Zero(dim)}}};
}

Registry abc() {
  return Registry({profile("A", ModelKind::open_source, 1.0, 0.9, kSource),
                   profile("B", ModelKind::commercial, 5.0, 0.6, kSource),
                   profile("C", ModelKind::open_source, 1.0, 0.3, kSource)});
}

std::vector<std::string> ids(const std::vector<RankedModel>& ranked) {
  std::vector<std::string> out;
  for (const auto& r : ranked) out.push_back(r.model_id);
  return out;
}

}  // namespace

TEST_CASE("dispatch ranks by predicted success") {
  const auto r = abc();
  const auto d = dispatch("design a FIFO", r, {2, true, CombineMode::single}, embeddings_for());
  CHECK(d.selected == std::vector<std::string>{"A", "B"});
  CHECK(ids(d.ranked) == std::vector<std::string>{"A", "B", "C"});
  CHECK(d.ranked[0].success_prob == doctest::Approx(0.9));
  CHECK(d.total_cost == 6.0);
  CHECK(d.task_hash == fnv1a_hex("design a FIFO"));
  CHECK(d.strategy == "dispatch");

  const auto big = dispatch("x", r, {10, true, CombineMode::single}, embeddings_for());
  CHECK(big.selected.size() == 3);
  CHECK_THROWS_AS(dispatch("x", r, {0, true, CombineMode::single}, embeddings_for()), Error);
}

TEST_CASE("commercial models can be excluded") {
  const auto d = dispatch("x", abc(), {2, false, CombineMode::single}, embeddings_for());
  CHECK(d.selected == std::vector<std::string>{"A", "C"});
  CHECK(ids(d.ranked) == std::vector<std::string>{"A", "C"});

  const Registry only_commercial({profile("B", ModelKind::commercial, 5.0, 0.6, kSource)});
  CHECK_THROWS_AS(dispatch("x", only_commercial, {1, false, CombineMode::single}, embeddings_for()), EmptyPoolError);

  auto disabled = profile("A", ModelKind::open_source, 1.0, 0.9, kSource);
  disabled.enabled = false;
  const Registry r({disabled, profile("C", ModelKind::open_source, 1.0, 0.3, kSource)});
  CHECK(dispatch("x", r, {1, true, CombineMode::single}, embeddings_for()).selected ==
        std::vector<std::string>{"C"});
}

TEST_CASE("equal predictions prefer the cheaper model, then the smaller id") {
  const Registry r({profile("pricey", ModelKind::open_source, 3.0, 0.5, kSource),
                    profile("cheap", ModelKind::open_source, 1.0, 0.5, kSource),
                    profile("also_cheap", ModelKind::open_source, 1.0, 0.5, kSource)});
  const auto d = dispatch("x", r, {1, true, CombineMode::single}, embeddings_for());
  CHECK(ids(d.ranked) == std::vector<std::string>{"also_cheap", "cheap", "pricey"});

  std::vector<Candidate> cs{{"b", 0.5, 1.0}, {"a", 0.5, 1.0}, {"c", 0.7, 9.0}};
  auto reversed = cs;
  std::reverse(reversed.begin(), reversed.end());
  const auto x = rank_candidates(cs), y = rank_candidates(reversed);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(x[i].model_id == y[i].model_id);
  CHECK(x[0].model_id == "c");
}

TEST_CASE("success_probability combines predictors") {
  auto m = profile("A", ModelKind::open_source, 1.0, 0.8, kSource);
  const auto decay = EmbeddingSource::decay(0.9);
  m.predictors.push_back(fixtures::constant_predictor("A", decay, 4, 0.4));
  EmbeddingsBySource e = embeddings_for();
  e.emplace(embedding_key(decay, "A"), EmbeddingVector{"task", decay, Eigen::VectorXd::Zero(4)});
  CHECK(success_probability(m, e, CombineMode::single) == doctest::Approx(0.8));
  CHECK(success_probability(m, e, CombineMode::mean) == doctest::Approx(0.6));
  e.erase(embedding_key(decay, "A"));
  CHECK(success_probability(m, e, CombineMode::single) == doctest::Approx(0.8));
  CHECK(support::error_of([&] { success_probability(m, e, CombineMode::mean); }).find("decay:0.9") !=
        std::string::npos);
}

TEST_CASE("embedding keys") {
  CHECK(embedding_key(EmbeddingSource::average(), "m1") == "average@m1");
  CHECK(embedding_key(EmbeddingSource::external("e", "http://x"), "m1") == "external:e");
}

TEST_CASE("the embedding callback is asked once per source and model") {
  const auto r = abc();
  std::vector<std::string> asked;
  const EmbedFn embed = [&](const std::string&, const EmbeddingSource& s, const std::string& model) {
    asked.push_back(embedding_key(s, model));
    return EmbeddingVector{"task", s, Eigen::VectorXd::Zero(4)};
  };
  const auto d = dispatch("x", r, {1, false, CombineMode::single}, embed);
  CHECK(asked == std::vector<std::string>{"average@A", "average@C"});
  CHECK(d.selected == std::vector<std::string>{"A"});
}

TEST_CASE("random dispatch") {
  const auto r = abc();
  const auto all = random_dispatch(r, 3, true, 1);
  CHECK(std::set<std::string>(all.selected.begin(), all.selected.end()) == std::set<std::string>{"A", "B", "C"});
  CHECK(all.strategy == "random");
  CHECK(random_dispatch(r, 2, true, 99).selected == random_dispatch(r, 2, true, 99).selected);
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto d = random_dispatch(r, 1, false, s);
    CHECK(d.selected.front() != "B");
  }

  const Registry four({profile("m0", ModelKind::open_source, 1.0, 0.5, kSource),
                       profile("m1", ModelKind::open_source, 1.0, 0.5, kSource),
                       profile("m2", ModelKind::open_source, 1.0, 0.5, kSource),
                       profile("m3", ModelKind::open_source, 1.0, 0.5, kSource)});
  std::map<std::string, int> counts;
  for (std::uint64_t s = 0; s < 10000; ++s) ++counts[random_dispatch(four, 1, true, s).selected.front()];
  for (const auto& [id, n] : counts) {
    CAPTURE(id);
    CHECK(std::abs(n / 10000.0 - 0.25) <= 0.02);
  }
  CHECK(counts.size() == 4);
}

TEST_CASE("oracle selection") {
  const auto r = abc();
  CHECK(oracle_select(r, {{"A", false}, {"B", false}, {"C", false}}).empty());
  CHECK(oracle_select(r, {{"A", false}, {"B", true}, {"C", false}}) == std::set<std::string>{"B"});
  CHECK(oracle_select(r, {{"A", false}, {"B", true}, {"C", false}}, false).empty());
  CHECK(support::error_of([&] { oracle_select(r, {{"A", true}, {"B", true}}); }).find("'C'") != std::string::npos);
}

TEST_CASE("dispatch properties over random registries") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> unit(0.01, 0.99);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ModelProfile> ms;
    const int n = std::uniform_int_distribution<int>(1, 7)(rng);
    for (int i = 0; i < n; ++i) {
      const auto kind = std::bernoulli_distribution(0.4)(rng) ? ModelKind::commercial : ModelKind::open_source;
      ms.push_back(profile("m" + std::to_string(i), kind, 10 * unit(rng), unit(rng), kSource));
    }
    const Registry r(ms);
    const int k = std::uniform_int_distribution<int>(1, n)(rng);
    const bool include = std::bernoulli_distribution(0.5)(rng);
    DispatchDecision d;
    try {
      d = dispatch("t", r, {k, include, CombineMode::single}, embeddings_for());
    } catch (const EmptyPoolError&) {
      CHECK_FALSE(include);
      continue;
    }
    double cost = 0.0;
    for (const auto& id : d.selected) {
      const auto* m = r.find(id);
      REQUIRE(m != nullptr);
      if (!include) CHECK(m->kind == ModelKind::open_source);
      cost += m->cost_per_call;
    }
    CHECK(d.total_cost == doctest::Approx(cost));
    CHECK(d.selected.size() == std::min<std::size_t>(static_cast<std::size_t>(k), d.ranked.size()));
    for (std::size_t i = 1; i < d.ranked.size(); ++i) CHECK(d.ranked[i - 1].success_prob >= d.ranked[i].success_prob);

    // Scaling every cost by a positive factor keeps the order.
    for (auto& m : ms) m.cost_per_call *= 3.5;
    const auto scaled = dispatch("t", Registry(ms), {k, include, CombineMode::single}, embeddings_for());
    CHECK(ids(scaled.ranked) == ids(d.ranked));
  }
}

TEST_CASE("registry validation and files") {
  CHECK_THROWS_AS(Registry({profile("A", ModelKind::open_source, 1.0, 0.9, kSource),
                            profile("A", ModelKind::open_source, 1.0, 0.9, kSource)}),
                  Error);
  auto no_pred = profile("A", ModelKind::open_source, 1.0, 0.9, kSource);
  no_pred.predictors.clear();
  CHECK_THROWS_AS(Registry({no_pred}), Error);
  auto mislabeled = profile("A", ModelKind::open_source, 1.0, 0.9, kSource);
  mislabeled.predictors = {fixtures::constant_predictor("Z", kSource, 4, 0.5)};
  CHECK_THROWS_AS(Registry({mislabeled}), Error);

  support::TempDir dir;
  const auto r = abc();
  std::map<std::string, std::vector<std::string>> paths;
  for (const auto& m : r.models()) {
    save_predictor(*m.predictors.front(), dir / (m.model_id + ".json"));
    paths[m.model_id] = {m.model_id + ".json"};
  }
  write_document(dir / "registry.json", registry_to_json(r, paths));
  const auto back = load_registry(dir / "registry.json");
  REQUIRE(back.models().size() == 3);
  CHECK(back.models()[1].kind == ModelKind::commercial);
  CHECK(back.models()[1].cost_per_call == 5.0);
  CHECK(registry_to_json(back, paths) == registry_to_json(r, paths));
  const auto a = dispatch("x", r, {3, true, CombineMode::single}, embeddings_for());
  const auto b = dispatch("x", back, {3, true, CombineMode::single}, embeddings_for());
  CHECK(to_json(a) == to_json(b));
  CHECK(back.sources().size() == 1);
}

TEST_CASE("decisions round-trip") {
  support::TempDir dir;
  auto d = dispatch("x", abc(), {2, false, CombineMode::mean}, embeddings_for());
  d.task_id = "t1_v0";
  save_decisions(dir / "d.jsonl", {d, random_dispatch(abc(), 1, true, 4)});
  const auto back = load_decisions(dir / "d.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(to_json(back[0]) == to_json(d));
  CHECK(back[0].policy.combine_mode == CombineMode::mean);
  CHECK(back[1].strategy == "random");
}
