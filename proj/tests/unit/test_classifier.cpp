#include <cmath>

#include "support.hpp"
#include "veridispatch/classifier.hpp"
#include "veridispatch/metrics.hpp"

using namespace veridispatch;

namespace {

const EmbeddingSource kSource = EmbeddingSource::average();

std::vector<TrainingExample> two_blobs(int n, int dim, double gap, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<TrainingExample> out;
  for (int i = 0; i < n; ++i) {
    const bool hard = i % 2 == 1;
    Eigen::VectorXd x(dim);
    for (int d = 0; d < dim; ++d) x(d) = normal(rng) + (hard ? gap / 2 : -gap / 2);
    out.push_back({{"v" + std::to_string(i), kSource, x}, hard ? Difficulty::hard : Difficulty::easy});
  }
  return out;
}

MlpConfig small_config() {
  MlpConfig c;
  c.hidden1 = 16;
  c.hidden2 = 8;
  c.dropout = 0.0;
  c.learning_rate = 0.05;
  c.max_epochs = 100;
  c.patience = 20;
  c.batch_size = 16;
  c.seed = 1;
  return c;
}

// Plain loops, no Eigen products.
double reference_logit(const TrainedPredictor& p, const Eigen::VectorXd& x) {
  const auto& w = p.weights;
  std::vector<double> z(static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i)
    z[static_cast<std::size_t>(i)] = (x(i) - p.standardizer.mean(i)) / p.standardizer.std(i);
  std::vector<double> a1(static_cast<std::size_t>(w.hidden1()));
  for (int r = 0; r < w.hidden1(); ++r) {
    double s = w.b1(r);
    for (int c = 0; c < w.input_dim(); ++c) s += w.w1(r, c) * z[static_cast<std::size_t>(c)];
    a1[static_cast<std::size_t>(r)] = std::max(0.0, s);
  }
  double out = w.b3;
  for (int r = 0; r < w.hidden2(); ++r) {
    double s = w.b2(r);
    for (int c = 0; c < w.hidden1(); ++c) s += w.w2(r, c) * a1[static_cast<std::size_t>(c)];
    out += w.w3(r) * std::max(0.0, s);
  }
  return out;
}

TrainedPredictor random_predictor(std::uint64_t seed, int d, int h1, int h2) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  TrainedPredictor p;
  p.model_id = "m";
  p.embedding_source = kSource;
  p.input_dim = d;
  p.weights = MlpWeights::glorot(d, h1, h2, rng);
  for (Eigen::Index i = 0; i < p.weights.b1.size(); ++i) p.weights.b1(i) = 0.1 * normal(rng);
  for (Eigen::Index i = 0; i < p.weights.b2.size(); ++i) p.weights.b2(i) = 0.1 * normal(rng);
  p.weights.b3 = 0.1 * normal(rng);
  p.standardizer.mean = Eigen::VectorXd(d);
  p.standardizer.std = Eigen::VectorXd(d);
  for (int i = 0; i < d; ++i) {
    p.standardizer.mean(i) = normal(rng);
    p.standardizer.std(i) = 0.5 + std::abs(normal(rng));
  }
  return p;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST_CASE("zero weights predict one half") {
  TrainedPredictor p;
  p.embedding_source = kSource;
  p.input_dim = 3;
  p.standardizer = {Eigen::VectorXd::Zero(3), Eigen::VectorXd::Ones(3)};
  p.weights = MlpWeights::zeros(3, 4, 2);
  const auto out = forward(p, Eigen::Vector3d(5, -1, 2));
  CHECK(out.logit == 0.0);
  CHECK(out.prob_hard == 0.5);
  CHECK_THROWS_AS(forward(p, Eigen::Vector2d(1, 1)), Error);
}

TEST_CASE("temperature pulls probabilities toward one half") {
  auto p = random_predictor(3, 5, 6, 4);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd x(5);
    for (int i = 0; i < 5; ++i) x(i) = normal(rng);
    p.temperature = 1.0;
    const auto cold = forward(p, x);
    p.temperature = 2.5;
    const auto warm = forward(p, x);
    CHECK(warm.logit == cold.logit);
    CHECK(std::abs(warm.prob_hard - 0.5) <= std::abs(cold.prob_hard - 0.5));
    CHECK(warm.prob_hard == doctest::Approx(sigmoid(cold.logit / 2.5)).epsilon(1e-14));
  }
}

TEST_CASE("forward matches an independent evaluation") {
  const auto p = random_predictor(42, 4, 3, 2);
  std::mt19937_64 rng(43);
  std::normal_distribution<double> normal(0.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd x(4);
    for (int i = 0; i < 4; ++i) x(i) = normal(rng);
    const auto out = forward(p, x);
    CHECK(std::abs(out.logit - reference_logit(p, x)) < 1e-12);
    CHECK(std::abs(out.prob_hard - sigmoid(reference_logit(p, x))) < 1e-12);
  }
}

TEST_CASE("loss gradient matches finite differences") {
  std::mt19937_64 rng(9);
  auto w = MlpWeights::glorot(5, 6, 4, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < w.parameter_count(); ++i) w.parameter(i) += 0.05 * normal(rng);
  Eigen::MatrixXd x(5, 12);
  Eigen::VectorXd y(12);
  for (int c = 0; c < 12; ++c) {
    for (int r = 0; r < 5; ++r) x(r, c) = normal(rng);
    y(c) = c % 3 == 0 ? 1.0 : 0.0;
  }
  MlpWeights grad = MlpWeights::zeros(5, 6, 4);
  loss_and_gradient(w, x, y, &grad);
  const double h = 1e-6;
  for (std::size_t i = 0; i < w.parameter_count(); ++i) {
    auto plus = w, minus = w;
    plus.parameter(i) += h;
    minus.parameter(i) -= h;
    const double numeric = (loss_and_gradient(plus, x, y, nullptr) - loss_and_gradient(minus, x, y, nullptr)) / (2 * h);
    CAPTURE(i);
    CHECK(grad.parameter(i) == doctest::Approx(numeric).epsilon(1e-5).scale(1.0));
  }
}

TEST_CASE("standardizer centers and scales each feature") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd cols(4, 50);
  for (int c = 0; c < 50; ++c) {
    for (int r = 0; r < 3; ++r) cols(r, c) = 10.0 * r + (r + 1) * 3.0 * normal(rng);
    cols(3, c) = 7.0;
  }
  const auto s = Standardizer::fit(cols);
  const Eigen::MatrixXd z = s.apply_columns(cols);
  for (int r = 0; r < 3; ++r) {
    const double mean = z.row(r).mean();
    const double var = (z.row(r).array() - mean).square().mean();
    CHECK(std::abs(mean) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-9);
  }
  CHECK(s.std(3) == 1.0);
  CHECK((z.row(3).array() == 0.0).all());
  CHECK((s.apply(cols.col(7)) - z.col(7)).norm() < 1e-15);
}

TEST_CASE("stratified split keeps both classes on both sides") {
  const auto data = two_blobs(50, 2, 1.0, 1);
  const auto split = stratified_split(data, 5);
  CHECK(split.train.size() + split.validation.size() == 50);
  CHECK(split.validation.size() == 10);
  std::set<std::size_t> seen(split.train.begin(), split.train.end());
  for (auto i : split.validation) CHECK(seen.insert(i).second);
  const auto again = stratified_split(data, 5);
  CHECK(again.train == split.train);
  CHECK(stratified_split(data, 6).train != split.train);
}

TEST_CASE("training separates separable data") {
  const auto data = two_blobs(200, 8, 3.0, 17);
  const auto p = train(data, small_config(), "m");
  std::vector<Difficulty> pred, truth;
  for (const auto& ex : data) {
    pred.push_back(forward(p, ex.embedding).prob_hard > 0.5 ? Difficulty::hard : Difficulty::easy);
    truth.push_back(ex.label);
  }
  CHECK(f1_macro(pred, truth) >= 0.95);
  CHECK(p.train_metrics.val_f1_macro >= 0.9);
  CHECK(p.train_metrics.val_accuracy >= 0.9);
  CHECK(p.train_metrics.epochs_run >= 1);
  CHECK(p.model_id == "m");
  CHECK(p.embedding_source == kSource);
}

TEST_CASE("training is deterministic for a seed") {
  const auto data = two_blobs(60, 4, 2.0, 3);
  auto cfg = small_config();
  cfg.dropout = 0.3;
  cfg.max_epochs = 20;
  cfg.patience = 5;
  const auto a = train(data, cfg), b = train(data, cfg);
  CHECK(a.weights == b.weights);
  CHECK(to_json(a).dump() == to_json(b).dump());
  cfg.seed = 2;
  CHECK_FALSE(train(data, cfg).weights == a.weights);
}

TEST_CASE("training rejects degenerate data") {
  auto data = two_blobs(20, 3, 1.0, 1);
  for (auto& ex : data) ex.label = Difficulty::easy;
  CHECK(support::error_of([&] { train(data, small_config()); }).find("single class") != std::string::npos);
  CHECK_THROWS_AS(train(std::vector<TrainingExample>{}, small_config()), Error);
  auto bad = small_config();
  bad.patience = bad.max_epochs;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("full-batch loss does not increase at a small learning rate") {
  const auto data = two_blobs(80, 6, 1.5, 21);
  const auto split = stratified_split(data, 3);
  auto cfg = small_config();
  cfg.learning_rate = 1e-3;
  cfg.batch_size = static_cast<int>(split.train.size());
  cfg.max_epochs = 60;
  cfg.patience = 59;
  std::vector<double> history;
  train_with_history(data, split, cfg, history);
  REQUIRE(history.size() >= 2);
  for (std::size_t i = 1; i < history.size(); ++i) CHECK(history[i] <= history[i - 1] + 1e-12);
  CHECK(history.back() < history.front());
}

TEST_CASE("grid search") {
  MlpGrid full;
  CHECK(full.expand().size() == 18);

  const auto data = two_blobs(60, 4, 3.0, 5);
  MlpGrid grid;
  grid.base = small_config();
  grid.base.max_epochs = 15;
  grid.base.patience = 5;
  grid.hidden_sizes = {{4, 3}};
  grid.learning_rate = {0.05};

  SUBCASE("single configuration") {
    grid.dropout = {0.0};
    const auto r = grid_search(data, grid);
    CHECK(r.rows.size() == 1);
    CHECK(r.best_index == 0);
    CHECK(r.rows[0].metrics.has_value());
  }
  SUBCASE("ties go to the earlier configuration") {
    grid.dropout = {0.0, 0.0, 0.0};
    const auto r = grid_search(data, grid);
    CHECK(r.rows.size() == 3);
    CHECK(r.best_index == 0);
  }
  SUBCASE("grid documents") {
    const auto g = mlp_grid_from_json(json::parse(R"({"hidden_sizes":[[8,4],[16,8]],"dropout":[0.1],"learning_rate":[0.01,0.001]})"),
                                      small_config());
    const auto cfgs = g.expand();
    CHECK(cfgs.size() == 4);
    CHECK(cfgs[0].hidden1 == 8);
    CHECK(cfgs[0].batch_size == small_config().batch_size);
  }
}

TEST_CASE("temperature fitting") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> normal(0.0, 2.0);
  std::vector<double> z, z3;
  std::vector<int> hard;
  for (int i = 0; i < 5000; ++i) {
    z.push_back(normal(rng));
    z3.push_back(3.0 * z.back());
    hard.push_back(std::bernoulli_distribution(sigmoid(z.back()))(rng) ? 1 : 0);
  }
  const double t = fit_temperature(z, hard);
  CHECK(t >= 0.8);
  CHECK(t <= 1.25);
  const double t3 = fit_temperature(z3, hard);
  CHECK(t3 / t == doctest::Approx(3.0).epsilon(0.01));
  CHECK(temperature_nll(z3, hard, t3) <= temperature_nll(z3, hard, 1.0));
  CHECK_THROWS_AS(fit_temperature(z, std::vector<int>(z.size(), 1)), Error);
}

TEST_CASE("calibration never raises validation loss and keeps weights") {
  const auto data = two_blobs(100, 4, 1.0, 8);
  const auto split = stratified_split(data, 1);
  const auto p = train(data, split, small_config());
  std::vector<TrainingExample> val;
  for (auto i : split.validation) val.push_back(data[i]);
  const auto c = calibrate(p, val);
  CHECK(c.weights == p.weights);
  std::vector<double> z;
  std::vector<int> hard;
  for (const auto& ex : val) {
    z.push_back(forward(p, ex.embedding).logit);
    hard.push_back(ex.label == Difficulty::hard);
  }
  CHECK(temperature_nll(z, hard, c.temperature) <= temperature_nll(z, hard, 1.0));
}

TEST_CASE("predictor files round-trip exactly") {
  support::TempDir dir;
  auto p = random_predictor(5, 6, 7, 3);
  p.temperature = 1.7320508075688772;
  p.train_metrics = {0.8, 0.4, 0.85, 12};
  save_predictor(p, dir / "p.json");
  const auto q = load_predictor(dir / "p.json");
  CHECK(q.weights == p.weights);
  CHECK(q.temperature == p.temperature);
  CHECK(q.train_metrics.val_accuracy == 0.85);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    Eigen::VectorXd x(6);
    for (int d = 0; d < 6; ++d) x(d) = normal(rng);
    CHECK(forward(q, x).prob_hard == forward(p, x).prob_hard);
  }

  json doc = to_json(p);
  SUBCASE("wrong row count") {
    doc["layers"][0]["weights"].erase(0);
    CHECK(support::error_of([&] { predictor_from_json(doc); }).find("layer 1 weights has 6 rows, expected 7") !=
          std::string::npos);
  }
  SUBCASE("unknown version") {
    doc["version"] = 99;
    CHECK(support::error_of([&] { predictor_from_json(doc); }).find("version 99") != std::string::npos);
  }
}
