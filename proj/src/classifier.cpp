#include "veridispatch/classifier.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "veridispatch/metrics.hpp"

namespace veridispatch {

void MlpConfig::validate() const {
  if (hidden1 < 1 || hidden2 < 1) throw Error("hidden sizes must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("dropout must lie in [0, 1)");
  if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
  if (max_epochs < 1) throw Error("max_epochs must be at least 1");
  if (patience < 1 || patience >= max_epochs) throw Error("patience must lie in [1, max_epochs)");
  if (batch_size < 1) throw Error("batch_size must be at least 1");
}

json to_json(const MlpConfig& c) {
  return {{"hidden_sizes", {c.hidden1, c.hidden2}},
          {"dropout", c.dropout},
          {"learning_rate", c.learning_rate},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"batch_size", c.batch_size},
          {"seed", c.seed}};
}

MlpConfig mlp_config_from_json(const json& j, MlpConfig c) {
  if (j.contains("hidden_sizes")) {
    auto h = require<std::vector<int>>(j, "hidden_sizes");
    if (h.size() != 2) throw Error("hidden_sizes must have two entries");
    c.hidden1 = h[0];
    c.hidden2 = h[1];
  }
  c.dropout = j.value("dropout", c.dropout);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

MlpWeights MlpWeights::zeros(int input_dim, int h1, int h2) {
  return {Eigen::MatrixXd::Zero(h1, input_dim), Eigen::VectorXd::Zero(h1),
          Eigen::MatrixXd::Zero(h2, h1),        Eigen::VectorXd::Zero(h2),
          Eigen::VectorXd::Zero(h2),            0.0};
}

MlpWeights MlpWeights::glorot(int input_dim, int h1, int h2, std::mt19937_64& rng) {
  auto w = zeros(input_dim, h1, h2);
  auto fill = [&rng](auto& m, int fan_in, int fan_out) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  };
  fill(w.w1, input_dim, h1);
  fill(w.w2, h1, h2);
  fill(w.w3, h2, 1);
  return w;
}

void MlpWeights::check_shapes() const {
  const auto d = w1.cols(), h1 = w1.rows(), h2 = w2.rows();
  if (d < 1 || h1 < 1 || h2 < 1) throw Error("empty weight matrix");
  if (b1.size() != h1) throw Error(fmt::format("layer 1 bias has {} entries, expected {}", b1.size(), h1));
  if (w2.cols() != h1) throw Error(fmt::format("layer 2 weights have {} columns, expected {}", w2.cols(), h1));
  if (b2.size() != h2) throw Error(fmt::format("layer 2 bias has {} entries, expected {}", b2.size(), h2));
  if (w3.size() != h2) throw Error(fmt::format("output weights have {} entries, expected {}", w3.size(), h2));
}

std::size_t MlpWeights::parameter_count() const {
  return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + 1);
}

double& MlpWeights::parameter(std::size_t i) {
  auto take = [&i](auto& block) -> double* {
    const auto n = static_cast<std::size_t>(block.size());
    if (i < n) return block.data() + i;
    i -= n;
    return nullptr;
  };
  if (auto* p = take(w1)) return *p;
  if (auto* p = take(b1)) return *p;
  if (auto* p = take(w2)) return *p;
  if (auto* p = take(b2)) return *p;
  if (auto* p = take(w3)) return *p;
  if (i == 0) return b3;
  throw Error("parameter index out of range");
}

double MlpWeights::parameter(std::size_t i) const {
  return const_cast<MlpWeights*>(this)->parameter(i);
}

void MlpWeights::axpy(double alpha, const MlpWeights& g) {
  w1.noalias() += alpha * g.w1;
  b1.noalias() += alpha * g.b1;
  w2.noalias() += alpha * g.w2;
  b2.noalias() += alpha * g.b2;
  w3.noalias() += alpha * g.w3;
  b3 += alpha * g.b3;
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& columns) {
  Standardizer s;
  const auto n = static_cast<double>(columns.cols());
  s.mean = columns.rowwise().sum() / n;
  s.std = ((columns.colwise() - s.mean).array().square().rowwise().sum() / n).sqrt().matrix();
  for (Eigen::Index i = 0; i < s.std.size(); ++i) {
    if (s.std[i] <= 1e-12 * std::max(1.0, std::abs(s.mean[i]))) s.std[i] = 1.0;
  }
  return s;
}

Eigen::VectorXd Standardizer::apply(const Eigen::VectorXd& x) const {
  return ((x - mean).array() / std.array()).matrix();
}

Eigen::MatrixXd Standardizer::apply_columns(const Eigen::MatrixXd& columns) const {
  return ((columns.colwise() - mean).array().colwise() / std.array()).matrix();
}

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

double loss_and_gradient(const MlpWeights& w, const Eigen::MatrixXd& x, const Eigen::VectorXd& targets,
                         MlpWeights* grad, const DropoutMasks* dropout) {
  const auto n = x.cols();
  const bool drop = dropout && dropout->hidden1.size() > 0;

  Eigen::MatrixXd a1 = (w.w1 * x).colwise() + w.b1;
  Eigen::MatrixXd h1 = a1.cwiseMax(0.0);
  if (drop) h1.array() *= dropout->hidden1.array();
  Eigen::MatrixXd a2 = (w.w2 * h1).colwise() + w.b2;
  Eigen::MatrixXd h2 = a2.cwiseMax(0.0);
  if (drop) h2.array() *= dropout->hidden2.array();
  Eigen::VectorXd z = (h2.transpose() * w.w3).array() + w.b3;

  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) loss += softplus(z[i]) - targets[i] * z[i];
  loss /= static_cast<double>(n);
  if (!grad) return loss;

  Eigen::VectorXd dz(n);
  for (Eigen::Index i = 0; i < n; ++i) dz[i] = (sigmoid(z[i]) - targets[i]) / static_cast<double>(n);

  grad->w3.noalias() = h2 * dz;
  grad->b3 = dz.sum();
  Eigen::MatrixXd d2 = w.w3 * dz.transpose();
  if (drop) d2.array() *= dropout->hidden2.array();
  d2.array() *= (a2.array() > 0.0).cast<double>();
  grad->w2.noalias() = d2 * h1.transpose();
  grad->b2 = d2.rowwise().sum();
  Eigen::MatrixXd d1 = w.w2.transpose() * d2;
  if (drop) d1.array() *= dropout->hidden1.array();
  d1.array() *= (a1.array() > 0.0).cast<double>();
  grad->w1.noalias() = d1 * x.transpose();
  grad->b1 = d1.rowwise().sum();
  return loss;
}

Eigen::VectorXd logits(const MlpWeights& w, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd h1 = ((w.w1 * x).colwise() + w.b1).cwiseMax(0.0);
  Eigen::MatrixXd h2 = ((w.w2 * h1).colwise() + w.b2).cwiseMax(0.0);
  return (h2.transpose() * w.w3).array() + w.b3;
}

void TrainedPredictor::check() const {
  weights.check_shapes();
  if (weights.input_dim() != input_dim) {
    throw Error(fmt::format("layer 1 weights expect {} inputs, predictor declares {}",
                            weights.input_dim(), input_dim));
  }
  if (standardizer.mean.size() != input_dim || standardizer.std.size() != input_dim) {
    throw Error("standardizer size does not match input_dim");
  }
  if ((standardizer.std.array() <= 0.0).any()) throw Error("standardizer std must be positive");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw Error("temperature must be positive");
}

Prediction forward(const TrainedPredictor& p, const Eigen::VectorXd& x) {
  if (x.size() != p.input_dim) {
    throw Error(fmt::format("predictor for '{}' expects dimension {}, got {}", p.model_id,
                            p.input_dim, x.size()));
  }
  const Eigen::VectorXd xs = p.standardizer.apply(x);
  const Eigen::VectorXd h1 = (p.weights.w1 * xs + p.weights.b1).cwiseMax(0.0);
  const Eigen::VectorXd h2 = (p.weights.w2 * h1 + p.weights.b2).cwiseMax(0.0);
  const double z = p.weights.w3.dot(h2) + p.weights.b3;
  return {z, sigmoid(z / p.temperature)};
}

Prediction forward(const TrainedPredictor& p, const EmbeddingVector& x) { return forward(p, x.values); }

std::vector<TrainingExample> join_examples(std::span<const DifficultyLabel> labels,
                                           std::span<const EmbeddingVector> embeddings) {
  std::map<std::string, const EmbeddingVector*> by_id;
  for (const auto& e : embeddings) {
    if (!by_id.emplace(e.variant_id, &e).second) {
      throw Error(fmt::format("more than one embedding for variant '{}'", e.variant_id));
    }
  }
  std::vector<TrainingExample> out;
  for (const auto& l : labels) {
    if (!l.kept) continue;
    auto it = by_id.find(l.variant_id);
    if (it == by_id.end()) throw Error(fmt::format("no embedding for variant '{}'", l.variant_id));
    out.push_back({*it->second, l.label});
  }
  return out;
}

DataSplit stratified_split(std::span<const TrainingExample> data, std::uint64_t seed,
                           double validation_fraction) {
  std::vector<std::size_t> easy, hard;
  for (std::size_t i = 0; i < data.size(); ++i) {
    (data[i].label == Difficulty::hard ? hard : easy).push_back(i);
  }
  if (easy.size() < 2 || hard.size() < 2) {
    throw Error(fmt::format("training needs at least two examples per class (easy={}, hard={})",
                            easy.size(), hard.size()));
  }
  std::mt19937_64 rng(seed ^ 0x5eed5eed5eedULL);
  DataSplit split;
  for (auto* cls : {&easy, &hard}) {
    std::shuffle(cls->begin(), cls->end(), rng);
    auto n_val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(cls->size())));
    n_val = std::clamp<std::size_t>(n_val, 1, cls->size() - 1);
    split.validation.insert(split.validation.end(), cls->begin(), cls->begin() + static_cast<std::ptrdiff_t>(n_val));
    split.train.insert(split.train.end(), cls->begin() + static_cast<std::ptrdiff_t>(n_val), cls->end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  return split;
}

namespace {

struct Matrices {
  Eigen::MatrixXd x;  // one example per column
  Eigen::VectorXd y;  // 1 = hard
};

Matrices gather(std::span<const TrainingExample> data, std::span<const std::size_t> idx, int dim) {
  Matrices m{Eigen::MatrixXd(dim, static_cast<Eigen::Index>(idx.size())),
             Eigen::VectorXd(static_cast<Eigen::Index>(idx.size()))};
  for (std::size_t c = 0; c < idx.size(); ++c) {
    m.x.col(static_cast<Eigen::Index>(c)) = data[idx[c]].embedding.values;
    m.y[static_cast<Eigen::Index>(c)] = data[idx[c]].label == Difficulty::hard ? 1.0 : 0.0;
  }
  return m;
}

int check_examples(std::span<const TrainingExample> data) {
  if (data.empty()) throw Error("no training examples");
  const auto& src = data.front().embedding.source;
  const auto dim = data.front().embedding.values.size();
  bool has_easy = false, has_hard = false;
  for (const auto& ex : data) {
    if (ex.embedding.values.size() != dim) throw Error("training examples have inconsistent dimensions");
    if (!(ex.embedding.source == src)) throw Error("training examples mix embedding sources");
    if (!ex.embedding.values.allFinite()) throw Error("training example is not finite");
    (ex.label == Difficulty::hard ? has_hard : has_easy) = true;
  }
  if (!has_easy || !has_hard) throw Error("training data contains a single class");
  return static_cast<int>(dim);
}

DropoutMasks draw_masks(int h1, int h2, Eigen::Index n, double p, std::mt19937_64& rng) {
  DropoutMasks m;
  if (p <= 0.0) return m;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - p);
  auto fill = [&](Eigen::MatrixXd& mask, int rows) {
    mask.resize(rows, n);
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = u(rng) < p ? 0.0 : keep_scale;
  };
  fill(m.hidden1, h1);
  fill(m.hidden2, h2);
  return m;
}

TrainMetrics evaluate(const MlpWeights& w, const Matrices& val) {
  TrainMetrics m;
  Eigen::VectorXd z = logits(w, val.x);
  std::vector<Difficulty> pred, truth;
  double nll = 0.0;
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    pred.push_back(z[i] > 0.0 ? Difficulty::hard : Difficulty::easy);
    truth.push_back(val.y[i] > 0.5 ? Difficulty::hard : Difficulty::easy);
    correct += pred.back() == truth.back() ? 1 : 0;
    nll += softplus(z[i]) - val.y[i] * z[i];
  }
  m.val_nll = nll / static_cast<double>(z.size());
  m.val_accuracy = static_cast<double>(correct) / static_cast<double>(z.size());
  m.val_f1_macro = f1_macro(pred, truth);
  return m;
}

TrainedPredictor train_impl(std::span<const TrainingExample> data, const DataSplit& split,
                            const MlpConfig& cfg, const std::string& model_id,
                            std::vector<double>* history) {
  cfg.validate();
  const int dim = check_examples(data);
  if (split.train.empty() || split.validation.empty()) throw Error("empty train or validation split");

  Matrices tr = gather(data, split.train, dim);
  Matrices val = gather(data, split.validation, dim);

  TrainedPredictor p;
  p.model_id = model_id;
  p.embedding_source = data.front().embedding.source;
  p.input_dim = dim;
  p.standardizer = Standardizer::fit(tr.x);
  tr.x = p.standardizer.apply_columns(tr.x);
  val.x = p.standardizer.apply_columns(val.x);

  std::mt19937_64 rng(cfg.seed);
  MlpWeights w = MlpWeights::glorot(dim, cfg.hidden1, cfg.hidden2, rng);
  MlpWeights grad = MlpWeights::zeros(dim, cfg.hidden1, cfg.hidden2);
  MlpWeights best = w;
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;
  int epoch = 0;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(tr.x.cols()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);

  while (epoch < cfg.max_epochs) {
    ++epoch;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                    order.begin() + static_cast<std::ptrdiff_t>(end));
      Eigen::MatrixXd xb = tr.x(Eigen::all, idx);
      Eigen::VectorXd yb = tr.y(idx);
      DropoutMasks masks = draw_masks(cfg.hidden1, cfg.hidden2, xb.cols(), cfg.dropout, rng);
      const double loss = loss_and_gradient(w, xb, yb, &grad, &masks);
      if (!std::isfinite(loss)) {
        throw Error(fmt::format("non-finite training loss at epoch {}", epoch));
      }
      w.axpy(-cfg.learning_rate, grad);
    }
    if (history) history->push_back(loss_and_gradient(w, tr.x, tr.y, nullptr));

    const double val_loss = loss_and_gradient(w, val.x, val.y, nullptr);
    if (!std::isfinite(val_loss)) {
      throw Error(fmt::format("non-finite validation loss at epoch {}", epoch));
    }
    if (val_loss < best_loss) {
      best_loss = val_loss;
      best = w;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }

  p.weights = std::move(best);
  p.train_metrics = evaluate(p.weights, val);
  p.train_metrics.epochs_run = epoch;
  return p;
}

}  // namespace

TrainedPredictor train(std::span<const TrainingExample> data, const MlpConfig& cfg,
                       const std::string& model_id) {
  check_examples(data);
  return train_impl(data, stratified_split(data, cfg.seed), cfg, model_id, nullptr);
}

TrainedPredictor train(std::span<const TrainingExample> data, const DataSplit& split,
                       const MlpConfig& cfg, const std::string& model_id) {
  return train_impl(data, split, cfg, model_id, nullptr);
}

TrainedPredictor train_with_history(std::span<const TrainingExample> data, const DataSplit& split,
                                    const MlpConfig& cfg, std::vector<double>& history) {
  return train_impl(data, split, cfg, {}, &history);
}

std::vector<MlpConfig> MlpGrid::expand() const {
  std::vector<MlpConfig> out;
  for (const auto& [h1, h2] : hidden_sizes) {
    for (double d : dropout) {
      for (double lr : learning_rate) {
        MlpConfig c = base;
        c.hidden1 = h1;
        c.hidden2 = h2;
        c.dropout = d;
        c.learning_rate = lr;
        out.push_back(c);
      }
    }
  }
  return out;
}

MlpGrid mlp_grid_from_json(const json& j, MlpConfig base) {
  MlpGrid g;
  g.base = base;
  if (j.contains("hidden_sizes")) {
    g.hidden_sizes.clear();
    for (const auto& h : j["hidden_sizes"]) {
      auto v = h.get<std::vector<int>>();
      if (v.size() != 2) throw Error("grid hidden_sizes entries must have two values");
      g.hidden_sizes.emplace_back(v[0], v[1]);
    }
  }
  if (j.contains("dropout")) g.dropout = require<std::vector<double>>(j, "dropout");
  if (j.contains("learning_rate")) g.learning_rate = require<std::vector<double>>(j, "learning_rate");
  return g;
}

GridResult grid_search(std::span<const TrainingExample> data, const MlpGrid& grid) {
  auto configs = grid.expand();
  if (configs.empty()) throw Error("empty hyperparameter grid");
  check_examples(data);
  const DataSplit split = stratified_split(data, grid.base.seed);

  GridResult result;
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    GridRow row{configs[i], std::nullopt, {}};
    try {
      row.metrics = train(data, split, configs[i]).train_metrics;
    } catch (const Error& e) {
      row.error = e.what();
    }
    if (row.metrics) {
      const auto& m = *row.metrics;
      bool better = !best;
      if (best) {
        const auto& b = *result.rows[*best].metrics;
        better = m.val_f1_macro > b.val_f1_macro ||
                 (m.val_f1_macro == b.val_f1_macro && m.val_nll < b.val_nll);
      }
      if (better) best = i;
    }
    result.rows.push_back(std::move(row));
  }
  if (!best) throw Error("every grid configuration failed to train");
  result.best_index = *best;
  result.best = configs[*best];
  return result;
}

double temperature_nll(std::span<const double> logits, std::span<const int> hard, double temperature) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i] / temperature;
    total += softplus(z) - (hard[i] ? z : 0.0);
  }
  return total / static_cast<double>(logits.size());
}

double fit_temperature(std::span<const double> logits, std::span<const int> hard) {
  if (logits.size() != hard.size()) throw Error("logit/label length mismatch");
  if (logits.empty()) throw Error("degenerate validation set: no examples");
  const auto n_hard = std::count_if(hard.begin(), hard.end(), [](int h) { return h != 0; });
  if (n_hard == 0 || n_hard == static_cast<std::ptrdiff_t>(hard.size())) {
    throw Error("degenerate validation set: a single class");
  }
  auto f = [&](double log_t) { return temperature_nll(logits, hard, std::exp(log_t)); };
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = std::log(0.05), b = std::log(20.0);
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > 1e-4) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  const double t = std::exp((a + b) / 2.0);
  return temperature_nll(logits, hard, t) <= temperature_nll(logits, hard, 1.0) ? t : 1.0;
}

TrainedPredictor calibrate(TrainedPredictor p, std::span<const TrainingExample> validation) {
  p.check();
  std::vector<double> z;
  std::vector<int> hard;
  for (const auto& ex : validation) {
    z.push_back(forward(p, ex.embedding).logit);
    hard.push_back(ex.label == Difficulty::hard ? 1 : 0);
  }
  p.temperature = fit_temperature(z, hard);
  return p;
}

namespace {

json matrix_rows(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<double> vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::MatrixXd matrix_from(const json& rows, const char* name, Eigen::Index expect_rows,
                            Eigen::Index expect_cols) {
  if (!rows.is_array() || static_cast<Eigen::Index>(rows.size()) != expect_rows) {
    throw Error(fmt::format("{} has {} rows, expected {}", name, rows.is_array() ? rows.size() : 0,
                            expect_rows));
  }
  Eigen::MatrixXd m(expect_rows, expect_cols);
  for (Eigen::Index r = 0; r < expect_rows; ++r) {
    auto row = rows[static_cast<std::size_t>(r)].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != expect_cols) {
      throw Error(fmt::format("{} row {} has {} columns, expected {}", name, r, row.size(), expect_cols));
    }
    for (Eigen::Index c = 0; c < expect_cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)];
  }
  return m;
}

Eigen::VectorXd vector_from(const json& j, const char* name, Eigen::Index expect) {
  auto v = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(v.size()) != expect) {
    throw Error(fmt::format("{} has {} entries, expected {}", name, v.size(), expect));
  }
  return Eigen::Map<const Eigen::VectorXd>(v.data(), expect);
}

}  // namespace

json to_json(const TrainedPredictor& p) {
  const auto& w = p.weights;
  return {
      {"format", "veridispatch-predictor"},
      {"version", kPredictorFormatVersion},
      {"model_id", p.model_id},
      {"embedding_source", to_json(p.embedding_source)},
      {"input_dim", p.input_dim},
      {"hidden_sizes", {w.hidden1(), w.hidden2()}},
      {"standardizer", {{"mean", vec(p.standardizer.mean)}, {"std", vec(p.standardizer.std)}}},
      {"layers",
       {{{"weights", matrix_rows(w.w1)}, {"bias", vec(w.b1)}},
        {{"weights", matrix_rows(w.w2)}, {"bias", vec(w.b2)}},
        {{"weights", matrix_rows(w.w3.transpose())}, {"bias", {w.b3}}}}},
      {"temperature", p.temperature},
      {"metrics",
       {{"val_f1_macro", p.train_metrics.val_f1_macro},
        {"val_nll", p.train_metrics.val_nll},
        {"val_accuracy", p.train_metrics.val_accuracy},
        {"epochs_run", p.train_metrics.epochs_run}}},
  };
}

TrainedPredictor predictor_from_json(const json& j) {
  const int version = require<int>(j, "version");
  if (version != kPredictorFormatVersion) {
    throw Error(fmt::format("unsupported predictor format version {} (expected {})", version,
                            kPredictorFormatVersion));
  }
  TrainedPredictor p;
  p.model_id = require<std::string>(j, "model_id");
  p.embedding_source = source_from_json(require<json>(j, "embedding_source"));
  p.input_dim = require<int>(j, "input_dim");
  auto hidden = require<std::vector<int>>(j, "hidden_sizes");
  if (hidden.size() != 2 || hidden[0] < 1 || hidden[1] < 1 || p.input_dim < 1) {
    throw Error("invalid layer sizes");
  }
  const Eigen::Index d = p.input_dim, h1 = hidden[0], h2 = hidden[1];
  const auto& st = require<json>(j, "standardizer");
  p.standardizer.mean = vector_from(require<json>(st, "mean"), "standardizer mean", d);
  p.standardizer.std = vector_from(require<json>(st, "std"), "standardizer std", d);
  const auto& layers = require<json>(j, "layers");
  if (!layers.is_array() || layers.size() != 3) throw Error("predictor must have three layers");
  p.weights.w1 = matrix_from(require<json>(layers[0], "weights"), "layer 1 weights", h1, d);
  p.weights.b1 = vector_from(require<json>(layers[0], "bias"), "layer 1 bias", h1);
  p.weights.w2 = matrix_from(require<json>(layers[1], "weights"), "layer 2 weights", h2, h1);
  p.weights.b2 = vector_from(require<json>(layers[1], "bias"), "layer 2 bias", h2);
  p.weights.w3 = matrix_from(require<json>(layers[2], "weights"), "output weights", 1, h2).transpose();
  p.weights.b3 = vector_from(require<json>(layers[2], "bias"), "output bias", 1)[0];
  p.temperature = require<double>(j, "temperature");
  if (j.contains("metrics")) {
    const auto& m = j["metrics"];
    p.train_metrics.val_f1_macro = m.value("val_f1_macro", 0.0);
    p.train_metrics.val_nll = m.value("val_nll", 0.0);
    p.train_metrics.val_accuracy = m.value("val_accuracy", 0.0);
    p.train_metrics.epochs_run = m.value("epochs_run", 0);
  }
  p.check();
  return p;
}

void save_predictor(const TrainedPredictor& p, const std::filesystem::path& path) {
  p.check();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
  out << to_json(p).dump() << '\n';
}

TrainedPredictor load_predictor(const std::filesystem::path& path) {
  try {
    return predictor_from_json(read_document(path));
  } catch (const json::exception& e) {
    throw Error(fmt::format("{}: {}", path.string(), e.what()));
  } catch (const Error& e) {
    throw Error(fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace veridispatch
