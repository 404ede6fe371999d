#include "veridispatch/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>

namespace veridispatch {

namespace {

// Exact C(n, k), or nothing on overflow.
std::optional<std::uint64_t> binomial(int n, int k) {
  std::uint64_t r = 1;
  for (int i = 0; i < k; ++i) {
    std::uint64_t next = 0;
    if (__builtin_mul_overflow(r, static_cast<std::uint64_t>(n - i), &next)) return std::nullopt;
    r = next / static_cast<std::uint64_t>(i + 1);
  }
  return r;
}

}  // namespace

double pass_at_k(int n, int c, int k) {
  if (n < 0 || c < 0 || c > n) throw Error(fmt::format("pass@k needs 0 <= c <= n (n={}, c={})", n, c));
  if (k < 1 || k > n) throw Error(fmt::format("pass@k needs 1 <= k <= n (n={}, k={})", n, k));
  if (n - c < k) return 1.0;
  const auto total = binomial(n, k), wrong = binomial(n - c, k);
  if (total && *total <= (std::uint64_t{1} << 53)) {
    return static_cast<double>(*total - *wrong) / static_cast<double>(*total);
  }
  double all_wrong = 1.0;
  for (int i = 0; i < k; ++i) {
    all_wrong *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
  }
  return 1.0 - all_wrong;
}

namespace {

double class_f1(std::span<const Difficulty> pred, std::span<const Difficulty> truth, Difficulty cls) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] == cls, t = truth[i] == cls;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
  }
  if (tp + fp == 0 && tp + fn == 0) return 1.0;
  const double denom = 2.0 * static_cast<double>(tp) + static_cast<double>(fp + fn);
  return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
}

}  // namespace

double f1_macro(std::span<const Difficulty> predictions, std::span<const Difficulty> truth) {
  if (predictions.size() != truth.size()) {
    throw Error(fmt::format("f1_macro length mismatch: {} predictions, {} labels",
                            predictions.size(), truth.size()));
  }
  return (class_f1(predictions, truth, Difficulty::easy) +
          class_f1(predictions, truth, Difficulty::hard)) / 2.0;
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("pearson_r length mismatch");
  if (x.size() < 2) throw Error("pearson_r needs at least two points");
  const auto n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw Error("pearson_r undefined for zero variance");
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

}  // namespace veridispatch
