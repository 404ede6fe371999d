#include <bit>

#include "support.hpp"
#include "veridispatch/metrics.hpp"

using namespace veridispatch;

namespace {

// Fraction of k-subsets of n samples (the first c correct) holding a correct one.
double pass_at_k_by_enumeration(int n, int c, int k) {
  long hit = 0, total = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (std::popcount(mask) != k) continue;
    ++total;
    hit += (mask & ((1u << c) - 1)) != 0;
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

constexpr Difficulty E = Difficulty::easy;
constexpr Difficulty H = Difficulty::hard;

}  // namespace

TEST_CASE("pass@k examples") {
  CHECK(pass_at_k(10, 0, 1) == 0.0);
  CHECK(pass_at_k(10, 10, 10) == 1.0);
  CHECK(pass_at_k(10, 1, 1) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(pass_at_k(10, 3, 5) == doctest::Approx(1.0 - 21.0 / 252.0).epsilon(1e-15));
  CHECK(pass_at_k(10, 6, 5) == 1.0);
  CHECK_THROWS_AS(pass_at_k(10, 11, 1), Error);
  CHECK_THROWS_AS(pass_at_k(10, 1, 0), Error);
  CHECK_THROWS_AS(pass_at_k(10, 1, 11), Error);
}

TEST_CASE("pass@k equals subset enumeration exactly") {
  for (int n = 1; n <= 12; ++n)
    for (int c = 0; c <= n; ++c)
      for (int k = 1; k <= n; ++k) {
        CAPTURE(n);
        CAPTURE(c);
        CAPTURE(k);
        CHECK(pass_at_k(n, c, k) == pass_at_k_by_enumeration(n, c, k));
      }
}

TEST_CASE("pass@k is monotone in c and k") {
  for (int n = 1; n <= 12; ++n)
    for (int c = 0; c <= n; ++c)
      for (int k = 1; k <= n; ++k) {
        if (c < n) CHECK(pass_at_k(n, c + 1, k) >= pass_at_k(n, c, k));
        if (k < n) CHECK(pass_at_k(n, c, k + 1) >= pass_at_k(n, c, k));
      }
}

TEST_CASE("pass@k stays finite for large n") {
  const double p = pass_at_k(200, 3, 100);
  CHECK(p > 0.8);
  CHECK(p <= 1.0);
  CHECK(pass_at_k(200, 1, 1) == doctest::Approx(1.0 / 200));
}

TEST_CASE("f1_macro examples") {
  const std::vector<Difficulty> truth{E, E, H, H};
  CHECK(f1_macro(truth, truth) == 1.0);
  CHECK(f1_macro(std::vector<Difficulty>{H, H, E, E}, truth) == 0.0);
  // easy: tp 1, fp 0, fn 1 -> 2/3; hard: tp 2, fp 1, fn 0 -> 4/5.
  CHECK(f1_macro(std::vector<Difficulty>{E, H, H, H}, truth) == doctest::Approx((2.0 / 3 + 0.8) / 2));
  // Hard never appears: that class scores 1.
  CHECK(f1_macro(std::vector<Difficulty>{E, E}, std::vector<Difficulty>{E, E}) == 1.0);
  CHECK(f1_macro(std::vector<Difficulty>{E, E}, std::vector<Difficulty>{H, H}) == 0.0);
  CHECK_THROWS_AS(f1_macro(std::vector<Difficulty>{E}, truth), Error);
}

TEST_CASE("f1_macro is invariant under swapping the class names") {
  std::mt19937_64 rng(8);
  std::bernoulli_distribution coin(0.5);
  auto flip = [](std::vector<Difficulty> v) {
    for (auto& d : v) d = d == E ? H : E;
    return v;
  };
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Difficulty> p(1 + trial % 17), t(p.size());
    for (auto& d : p) d = coin(rng) ? H : E;
    for (auto& d : t) d = coin(rng) ? H : E;
    const double f = f1_macro(p, t);
    CHECK(f == doctest::Approx(f1_macro(flip(p), flip(t))));
    CHECK(f >= 0.0);
    CHECK(f <= 1.0);
  }
}

TEST_CASE("pearson_r examples and invariants") {
  const std::vector<double> x{1, 2, 3, 4};
  CHECK(pearson_r(x, std::vector<double>{2, 4, 6, 8}) == doctest::Approx(1.0));
  CHECK(pearson_r(x, std::vector<double>{8, 6, 4, 2}) == doctest::Approx(-1.0));
  CHECK(pearson_r(std::vector<double>{1, 2, 3}, std::vector<double>{1, 3, 2}) == doctest::Approx(0.5));
  CHECK_THROWS_AS(pearson_r(x, std::vector<double>{1, 1, 1, 1}), Error);
  CHECK_THROWS_AS(pearson_r(std::vector<double>{1}, std::vector<double>{1}), Error);

  std::mt19937_64 rng(12);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(8), b(8), b2(8);
    for (auto& v : a) v = normal(rng);
    for (auto& v : b) v = normal(rng);
    const double scale = std::exp(normal(rng)), shift = 10 * normal(rng);
    for (std::size_t i = 0; i < b.size(); ++i) b2[i] = scale * b[i] + shift;
    const double r = pearson_r(a, b);
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
    CHECK(pearson_r(a, b2) == doctest::Approx(r).epsilon(1e-9));
    CHECK(pearson_r(b, a) == doctest::Approx(r).epsilon(1e-12));
  }
}
