#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "foa/error.hpp"
#include "foa/image.hpp"
#include "foa/matrix.hpp"

namespace foa {

inline constexpr double kLossFloor = 1e-12;

/// Dynamic ensemble weighting: speeds are per-encoder loss ratios between
/// consecutive steps, weights are w_init * t * softmax(speeds / T).
struct EnsembleState {
  std::size_t encoder_count = 0;
  Vector prev_losses;
  Vector speeds;
  Vector weights;
  double w_init = 1.0;
  double temperature = 1.0;
  std::size_t step = 0;

  static EnsembleState create(std::size_t t, double w_init = 1.0, double temperature = 1.0) {
    require(t >= 1, ErrorCode::InvalidConfig, "ensemble needs at least one encoder");
    require(temperature > 0.0, ErrorCode::NonPositiveTemperature, "ensemble temperature must be > 0");
    require(w_init > 0.0, ErrorCode::InvalidConfig, "w_init must be > 0");
    EnsembleState s;
    s.encoder_count = t;
    s.prev_losses.assign(t, 0.0);
    s.speeds.assign(t, 1.0);
    s.weights.assign(t, w_init);
    s.w_init = w_init;
    s.temperature = temperature;
    return s;
  }
};

inline EnsembleState update_weights(EnsembleState state, std::span<const double> current) {
  require(current.size() == state.encoder_count, ErrorCode::ShapeMismatch,
          "loss vector length does not match the ensemble size");
  Vector floored(current.size());
  for (std::size_t i = 0; i < current.size(); ++i) {
    require(std::isfinite(current[i]) && current[i] > 0.0, ErrorCode::NonPositiveLoss,
            "ensemble losses must be finite and > 0");
    floored[i] = std::max(current[i], kLossFloor);
  }
  for (std::size_t i = 0; i < floored.size(); ++i)
    state.speeds[i] = state.step == 0 ? 1.0 : floored[i] / state.prev_losses[i];
  const Vector p = softmax(state.speeds, state.temperature);
  const double scale = state.w_init * static_cast<double>(state.encoder_count);
  for (std::size_t i = 0; i < p.size(); ++i) state.weights[i] = scale * p[i];
  state.prev_losses = std::move(floored);
  ++state.step;
  return state;
}

struct WeightedTotal {
  double total = 0.0;
  InputGradient grad;
};

/// total = sum W_i L_i; grad = (1/t) sum W_i grad_i.
inline WeightedTotal weighted_total(std::span<const double> losses,
                                    std::span<const InputGradient> grads,
                                    std::span<const double> weights) {
  require(!losses.empty() && losses.size() == grads.size() && losses.size() == weights.size(),
          ErrorCode::ShapeMismatch, "weighted_total needs matching lengths");
  WeightedTotal out;
  out.grad = InputGradient(grads[0].height(), grads[0].width());
  const double inv_t = 1.0 / static_cast<double>(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) {
    require(grads[i].same_shape(out.grad), ErrorCode::ShapeMismatch,
            "ensemble gradients have different shapes");
    out.total += weights[i] * losses[i];
    axpy(weights[i] * inv_t, grads[i].flat(), out.grad.flat());
  }
  return out;
}

}  // namespace foa
