#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "veridispatch/common.hpp"
#include "veridispatch/http.hpp"

namespace veridispatch {

enum class PoolingKind { last_token, average, decay, external };

std::string_view to_string(PoolingKind k);
PoolingKind pooling_kind_from_string(std::string_view s);

/// Where an embedding comes from: a pooling rule over hidden states, or an
/// external embedding model behind an HTTP endpoint.
struct EmbeddingSource {
  PoolingKind kind = PoolingKind::average;
  std::optional<double> decay_weight;  // decay only
  std::string provider_model;          // external only
  std::string endpoint;                // external only
  int dimension = 0;                   // 0 when not declared

  static EmbeddingSource last_token() { return {PoolingKind::last_token, std::nullopt, {}, {}, 0}; }
  static EmbeddingSource average() { return {PoolingKind::average, std::nullopt, {}, {}, 0}; }
  static EmbeddingSource decay(double d = 0.9) { return {PoolingKind::decay, d, {}, {}, 0}; }
  static EmbeddingSource external(std::string provider, std::string endpoint, int dim = 0) {
    return {PoolingKind::external, std::nullopt, std::move(provider), std::move(endpoint), dim};
  }

  /// Throws Error when the kind-specific fields are inconsistent.
  void validate() const;

  /// Stable identity used to match embeddings to predictors ("average",
  /// "decay:0.9", "external:<provider>").
  std::string key() const;

  bool operator==(const EmbeddingSource&) const = default;
};

json to_json(const EmbeddingSource& s);
EmbeddingSource source_from_json(const json& j);

/// Last-layer hidden states (T tokens by D dims) and the attention mask.
struct TokenMatrix {
  std::string variant_id;
  std::string source_model_id;
  Eigen::MatrixXd hidden;
  std::vector<std::uint8_t> attention_mask;

  void validate() const;
};

struct EmbeddingVector {
  std::string variant_id;
  EmbeddingSource source;
  Eigen::VectorXd values;

  void validate() const;
};

json to_json(const EmbeddingVector& e);
EmbeddingVector embedding_from_json(const json& j);
std::vector<EmbeddingVector> load_embeddings(const std::filesystem::path& path);
void save_embeddings(const std::filesystem::path& path, const std::vector<EmbeddingVector>& es);

namespace detail {

inline void check_mask(Eigen::Index rows, std::span<const std::uint8_t> mask) {
  if (static_cast<Eigen::Index>(mask.size()) != rows) {
    throw Error("attention mask length does not match the token count");
  }
  for (auto m : mask) {
    if (m) return;
  }
  throw Error("attention mask has no active token");
}

}  // namespace detail

/// Hidden row of the last position whose mask entry is 1.
template <class Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> pool_last_token(
    const Eigen::MatrixBase<Derived>& hidden, std::span<const std::uint8_t> mask) {
  detail::check_mask(hidden.rows(), mask);
  Eigen::Index last = 0;
  for (Eigen::Index i = 0; i < hidden.rows(); ++i) {
    if (mask[static_cast<std::size_t>(i)]) last = i;
  }
  return hidden.row(last).transpose();
}

/// Mean of the unmasked rows, summed in token order.
template <class Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> pool_average(
    const Eigen::MatrixBase<Derived>& hidden, std::span<const std::uint8_t> mask) {
  using Scalar = typename Derived::Scalar;
  detail::check_mask(hidden.rows(), mask);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sum =
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(hidden.cols());
  Scalar count(0);
  for (Eigen::Index i = 0; i < hidden.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    sum += hidden.row(i).transpose();
    count += Scalar(1);
  }
  return sum / count;
}

/// Weighted mean of the unmasked rows. The j-th of M unmasked rows gets
/// weight d^(M-1-j), so the latest token weighs most. With d = 1 the
/// arithmetic is identical to pool_average.
template <class Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> pool_decay(
    const Eigen::MatrixBase<Derived>& hidden, std::span<const std::uint8_t> mask,
    typename Derived::Scalar d) {
  using Scalar = typename Derived::Scalar;
  detail::check_mask(hidden.rows(), mask);
  if (!(d > Scalar(0) && d <= Scalar(1))) throw Error("decay weight must lie in (0, 1]");
  Eigen::Index active = 0;
  for (auto m : mask) active += m ? 1 : 0;

  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sum =
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(hidden.cols());
  Scalar total(0);
  Eigen::Index j = 0;
  for (Eigen::Index i = 0; i < hidden.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    const Scalar w = std::pow(d, static_cast<Scalar>(active - 1 - j));
    sum += w * hidden.row(i).transpose();
    total += w;
    ++j;
  }
  return sum / total;
}

/// Applies the pooling rule named by `source` (any kind but external).
EmbeddingVector pool(const TokenMatrix& m, const EmbeddingSource& source);

std::vector<TokenMatrix> import_token_matrices(const std::filesystem::path& path);
TokenMatrix token_matrix_from_json(const json& j);

/// Client for an OpenAI-compatible /v1/embeddings endpoint with an in-memory
/// cache keyed by (provider model, text). Concurrent requests for a text that
/// is already in flight wait for that request instead of issuing another.
class EmbeddingClient {
 public:
  EmbeddingClient(EmbeddingSource source, HttpOptions options = {});

  std::vector<EmbeddingVector> fetch(const std::vector<std::string>& texts);

  const EmbeddingSource& source() const { return source_; }

  /// Number of HTTP rounds that reached the transport layer (including retries).
  std::uint64_t requests() const { return requests_.load(); }
  std::uint64_t cache_hits() const { return hits_.load(); }
  std::uint64_t cache_lookups() const { return lookups_.load(); }

 private:
  using Vec = std::shared_ptr<const Eigen::VectorXd>;

  std::vector<Eigen::VectorXd> request(const std::vector<std::string>& texts);

  EmbeddingSource source_;
  HttpOptions options_;
  std::mutex mutex_;
  std::map<std::string, std::shared_future<Vec>> cache_;
  std::atomic<std::uint64_t> requests_{0};
  std::atomic<std::uint64_t> hits_{0};
  std::atomic<std::uint64_t> lookups_{0};
};

/// One-shot convenience wrapper around EmbeddingClient.
std::vector<EmbeddingVector> fetch_external(const std::vector<std::string>& texts,
                                            const EmbeddingSource& source,
                                            const HttpOptions& options = {});

}  // namespace veridispatch
