#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "veridispatch/difficulty.hpp"
#include "veridispatch/embedding.hpp"

namespace veridispatch {

struct MlpConfig {
  int hidden1 = 512;
  int hidden2 = 256;
  double dropout = 0.1;
  double learning_rate = 1e-4;
  int max_epochs = 200;
  int patience = 10;
  int batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

json to_json(const MlpConfig& c);
MlpConfig mlp_config_from_json(const json& j, MlpConfig defaults = {});

/// Parameters of the D -> h1 -> h2 -> 1 network. Weight matrices are
/// (out x in), so a layer computes W * x + b.
struct MlpWeights {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;
  Eigen::VectorXd w3;
  double b3 = 0.0;

  static MlpWeights zeros(int input_dim, int h1, int h2);
  /// Glorot-uniform weights, zero biases.
  static MlpWeights glorot(int input_dim, int h1, int h2, std::mt19937_64& rng);

  int input_dim() const { return static_cast<int>(w1.cols()); }
  int hidden1() const { return static_cast<int>(w1.rows()); }
  int hidden2() const { return static_cast<int>(w2.rows()); }

  /// Throws Error unless the shapes chain D -> h1 -> h2 -> 1.
  void check_shapes() const;

  /// Flattened view used by optimizers and finite-difference checks.
  std::size_t parameter_count() const;
  double& parameter(std::size_t i);
  double parameter(std::size_t i) const;

  void axpy(double alpha, const MlpWeights& other);  // this += alpha * other
  bool operator==(const MlpWeights&) const = default;
};

/// Per-feature affine map to zero mean and unit variance. Features with zero
/// variance keep std 1.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;

  /// `columns` holds one example per column.
  static Standardizer fit(const Eigen::MatrixXd& columns);
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd apply_columns(const Eigen::MatrixXd& columns) const;
};

/// Inverted-dropout keep masks for the two hidden layers, already scaled by
/// 1/(1-p). Empty matrices mean dropout is off.
struct DropoutMasks {
  Eigen::MatrixXd hidden1;
  Eigen::MatrixXd hidden2;
};

/// Mean binary cross-entropy of the logits against `targets` (1 = hard) over
/// the standardized examples in `x` (one per column). When `grad` is non-null
/// it receives the gradient of that loss.
double loss_and_gradient(const MlpWeights& w, const Eigen::MatrixXd& x,
                         const Eigen::VectorXd& targets, MlpWeights* grad,
                         const DropoutMasks* dropout = nullptr);

/// Raw output logits, one per column of standardized input.
Eigen::VectorXd logits(const MlpWeights& w, const Eigen::MatrixXd& x);

struct TrainMetrics {
  double val_f1_macro = 0.0;
  double val_nll = 0.0;
  double val_accuracy = 0.0;
  int epochs_run = 0;
};

struct TrainedPredictor {
  std::string model_id;
  EmbeddingSource embedding_source;
  int input_dim = 0;
  Standardizer standardizer;
  MlpWeights weights;
  double temperature = 1.0;
  TrainMetrics train_metrics;

  void check() const;
};

struct Prediction {
  double logit = 0.0;
  double prob_hard = 0.5;
};

/// Standardize, two ReLU layers, one logit; prob_hard = sigmoid(logit / T).
Prediction forward(const TrainedPredictor& p, const Eigen::VectorXd& x);
Prediction forward(const TrainedPredictor& p, const EmbeddingVector& x);

struct TrainingExample {
  EmbeddingVector embedding;
  Difficulty label = Difficulty::easy;
};

/// Joins kept labels with embeddings on variant id. Labels without an
/// embedding are an error.
std::vector<TrainingExample> join_examples(std::span<const DifficultyLabel> labels,
                                           std::span<const EmbeddingVector> embeddings);

/// Seeded, stratified 80/20 split (indices into the example list).
struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

DataSplit stratified_split(std::span<const TrainingExample> data, std::uint64_t seed,
                           double validation_fraction = 0.2);

/// Mini-batch gradient descent on binary cross-entropy with early stopping
/// on validation loss. Deterministic for a fixed seed.
TrainedPredictor train(std::span<const TrainingExample> data, const MlpConfig& cfg,
                       const std::string& model_id = {});
TrainedPredictor train(std::span<const TrainingExample> data, const DataSplit& split,
                       const MlpConfig& cfg, const std::string& model_id = {});

/// Same as train(), but every epoch's full-batch training loss (dropout off)
/// is appended to `history`.
TrainedPredictor train_with_history(std::span<const TrainingExample> data, const DataSplit& split,
                                    const MlpConfig& cfg, std::vector<double>& history);

struct MlpGrid {
  std::vector<std::pair<int, int>> hidden_sizes{{512, 256}, {1024, 512}};
  std::vector<double> dropout{0.1, 0.3, 0.5};
  std::vector<double> learning_rate{1e-3, 1e-4, 1e-5};
  MlpConfig base;  // supplies the remaining fields

  std::vector<MlpConfig> expand() const;
};

MlpGrid mlp_grid_from_json(const json& j, MlpConfig base);

struct GridRow {
  MlpConfig config;
  std::optional<TrainMetrics> metrics;
  std::string error;
};

struct GridResult {
  MlpConfig best;
  std::size_t best_index = 0;
  std::vector<GridRow> rows;
};

/// Trains each configuration on one shared split (seeded by grid.base.seed)
/// and keeps the best validation F1-macro; ties go to lower validation NLL,
/// then to grid order.
GridResult grid_search(std::span<const TrainingExample> data, const MlpGrid& grid);

/// Mean negative log-likelihood of sigmoid(z / T) against labels (1 = hard).
double temperature_nll(std::span<const double> logits, std::span<const int> hard, double temperature);

/// Golden-section search for the temperature minimizing validation NLL on
/// log T in [log 0.05, log 20]. Weights are untouched.
TrainedPredictor calibrate(TrainedPredictor p, std::span<const TrainingExample> validation);
double fit_temperature(std::span<const double> logits, std::span<const int> hard);

inline constexpr int kPredictorFormatVersion = 1;

json to_json(const TrainedPredictor& p);
TrainedPredictor predictor_from_json(const json& j);
void save_predictor(const TrainedPredictor& p, const std::filesystem::path& path);
TrainedPredictor load_predictor(const std::filesystem::path& path);

}  // namespace veridispatch
