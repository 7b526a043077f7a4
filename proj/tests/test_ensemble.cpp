#include <gtest/gtest.h>

#include <cmath>

#include "foa/ensemble.hpp"
#include "foa/oracles.hpp"

using namespace foa;

namespace {

// Two updates: losses `prev` then `cur`, so speeds are cur / prev.
EnsembleState with_speeds(const Vector& prev, const Vector& cur, double w_init = 1.0, double temp = 1.0) {
  auto s = EnsembleState::create(prev.size(), w_init, temp);
  s = update_weights(s, prev);
  return update_weights(s, cur);
}

}  // namespace

TEST(Ensemble, StepZeroSpeedsAreOne) {
  auto s = update_weights(EnsembleState::create(3), Vector{0.3, 0.9, 2.0});
  for (double v : s.speeds) EXPECT_EQ(v, 1.0);
  for (double w : s.weights) EXPECT_NEAR(w, 1.0, 1e-15);
  EXPECT_EQ(s.prev_losses, (Vector{0.3, 0.9, 2.0}));
}

TEST(Ensemble, EqualSpeedsUniform) {
  const auto s = with_speeds({1.0, 2.0, 4.0}, {0.5, 1.0, 2.0}, 1.5);
  for (double w : s.weights) EXPECT_NEAR(w, 1.5, 1e-12);
}

TEST(Ensemble, DerivedWeights) {
  const auto s = with_speeds({1.0, 1.0}, {0.5, 1.0});
  EXPECT_DOUBLE_EQ(s.speeds[0], 0.5);
  EXPECT_DOUBLE_EQ(s.speeds[1], 1.0);
  EXPECT_NEAR(s.weights[0], 0.75508, 1e-5);
  EXPECT_NEAR(s.weights[1], 1.24492, 1e-5);
  EXPECT_NEAR(s.weights[0], 2.0 * std::exp(0.5) / (std::exp(0.5) + std::exp(1.0)), 1e-15);
}

TEST(Ensemble, HighTemperatureFlattens) {
  // deviation from 1 is about (S_j - mean S) / T
  const auto s = with_speeds({1.0, 1.0, 1.0}, {0.2, 1.0, 3.0}, 1.0, 1e9);
  for (double w : s.weights) EXPECT_NEAR(w, 1.0, 1e-8);
}

TEST(Ensemble, SumAndAntiMonotone) {
  Rng rng(1);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + t % 5;
    Vector prev(n), cur(n);
    for (std::size_t i = 0; i < n; ++i) {
      prev[i] = rng.uniform(0.01, 2.0);
      cur[i] = rng.uniform(0.01, 2.0);
    }
    const double w0 = rng.uniform(0.1, 3.0), temp = rng.uniform(0.1, 4.0);
    const auto s = with_speeds(prev, cur, w0, temp);
    double sum = 0.0;
    for (double w : s.weights) {
      EXPECT_GT(w, 0.0);
      sum += w;
    }
    EXPECT_NEAR(sum, w0 * static_cast<double>(n), 1e-9);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (s.speeds[i] < s.speeds[j]) {
          EXPECT_LT(s.weights[i], s.weights[j]);
        }
  }
}

TEST(Ensemble, ScaleCovariantPerEncoder) {
  const auto a = with_speeds({0.4, 1.0}, {0.3, 0.9});
  const auto b = with_speeds({0.4 * 7.0, 1.0}, {0.3 * 7.0, 0.9});
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(a.speeds[i], b.speeds[i], 1e-15);
    EXPECT_NEAR(a.weights[i], b.weights[i], 1e-15);
  }
}

TEST(Ensemble, Errors) {
  auto s = EnsembleState::create(2);
  EXPECT_THROW(update_weights(s, Vector{1.0, 0.0}), Error);
  EXPECT_THROW(update_weights(s, Vector{1.0, -1.0}), Error);
  EXPECT_THROW(update_weights(s, Vector{1.0}), Error);
  try {
    update_weights(s, Vector{1.0, std::nan("")});
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonPositiveLoss);
  }
  EXPECT_THROW(EnsembleState::create(2, 1.0, 0.0), Error);
}

TEST(Ensemble, LossFloor) {
  auto s = update_weights(EnsembleState::create(2), Vector{1e-20, 1.0});
  EXPECT_EQ(s.prev_losses[0], kLossFloor);
  s = update_weights(s, Vector{1e-20, 1.0});
  EXPECT_EQ(s.speeds[0], 1.0);
}

TEST(WeightedTotal, UniformIsPlainSum) {
  Rng rng(2);
  const std::vector<InputGradient> g{oracle::random_image(3, 3, rng), oracle::random_image(3, 3, rng)};
  const auto r = weighted_total(Vector{0.5, 0.25}, g, Vector{1.0, 1.0});
  EXPECT_DOUBLE_EQ(r.total, 0.75);
  for (std::size_t i = 0; i < r.grad.size(); ++i)
    EXPECT_NEAR(r.grad.flat()[i], (g[0].flat()[i] + g[1].flat()[i]) / 2.0, 1e-15);
}

TEST(WeightedTotal, ZeroWeightDropsEncoder) {
  Rng rng(3);
  const std::vector<InputGradient> g{oracle::random_image(3, 3, rng), oracle::random_image(3, 3, rng)};
  const auto r = weighted_total(Vector{0.5, 0.25}, g, Vector{0.0, 2.0});
  EXPECT_DOUBLE_EQ(r.total, 0.5);
  for (std::size_t i = 0; i < r.grad.size(); ++i) EXPECT_DOUBLE_EQ(r.grad.flat()[i], g[1].flat()[i]);
}

TEST(WeightedTotal, LinearInWeights) {
  Rng rng(4);
  const std::vector<InputGradient> g{oracle::random_image(4, 2, rng), oracle::random_image(4, 2, rng),
                                     oracle::random_image(4, 2, rng)};
  const Vector l{0.3, 0.6, 0.9}, w{0.4, 1.1, 1.5};
  Vector w2 = w;
  for (double& x : w2) x *= 2.0;
  const auto a = weighted_total(l, g, w), b = weighted_total(l, g, w2);
  EXPECT_NEAR(b.total, 2.0 * a.total, 1e-12);
  for (std::size_t i = 0; i < a.grad.size(); ++i) EXPECT_NEAR(b.grad.flat()[i], 2.0 * a.grad.flat()[i], 1e-12);
}

TEST(WeightedTotal, ShapeMismatch) {
  const std::vector<InputGradient> g{Image(2, 2), Image(3, 2)};
  EXPECT_THROW(weighted_total(Vector{1, 1}, g, Vector{1, 1}), Error);
  EXPECT_THROW(weighted_total(Vector{1}, g, Vector{1, 1}), Error);
}
