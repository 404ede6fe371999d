#pragma once

#include <cmath>
#include <memory>

#include "veridispatch/classifier.hpp"
#include "veridispatch/dispatch.hpp"

namespace fixtures {

using namespace veridispatch;

// A predictor whose success probability is `p_success` for every input.
inline std::shared_ptr<const TrainedPredictor> constant_predictor(const std::string& model_id,
                                                                  const EmbeddingSource& source,
                                                                  int dim, double p_success) {
  TrainedPredictor p;
  p.model_id = model_id;
  p.embedding_source = source;
  p.input_dim = dim;
  p.standardizer.mean = Eigen::VectorXd::Zero(dim);
  p.standardizer.std = Eigen::VectorXd::Ones(dim);
  p.weights = MlpWeights::zeros(dim, 4, 3);
  const double p_hard = 1.0 - p_success;
  p.weights.b3 = std::log(p_hard / (1.0 - p_hard));
  return std::make_shared<const TrainedPredictor>(std::move(p));
}

inline ModelProfile profile(const std::string& id, ModelKind kind, double cost, double p_success,
                            const EmbeddingSource& source, int dim = 4, std::string endpoint = {}) {
  ModelProfile m;
  m.model_id = id;
  m.kind = kind;
  m.cost_per_call = cost;
  m.predictors = {constant_predictor(id, source, dim, p_success)};
  m.backend_endpoint = std::move(endpoint);
  m.provider_model = id;
  return m;
}

}  // namespace fixtures
