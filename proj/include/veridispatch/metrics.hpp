#pragma once

#include <span>

#include "veridispatch/difficulty.hpp"

namespace veridispatch {

/// Unbiased pass@k estimator 1 - C(n-c, k) / C(n, k). Exact binomials give a
/// correctly rounded result while they fit in 53 bits; beyond that a running
/// product avoids overflow.
double pass_at_k(int n, int c, int k);

/// Unweighted mean of the easy and hard F1 scores. A class absent from both
/// predictions and truth scores 1; any other zero denominator scores 0.
double f1_macro(std::span<const Difficulty> predictions, std::span<const Difficulty> truth);

/// Sample Pearson correlation. Throws when either input has zero variance.
double pearson_r(std::span<const double> x, std::span<const double> y);

}  // namespace veridispatch
