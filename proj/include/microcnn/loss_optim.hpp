#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "microcnn/errors.hpp"
#include "microcnn/tensor.hpp"

namespace microcnn {

/// Probabilities below this are clamped before taking the log.
inline constexpr double kProbabilityFloor = 1e-7;

struct LossValue {
  double mean_loss = 0.0;
  std::vector<double> per_sample;
};

namespace detail {

inline void check_onehot(const Tensor& probs, const Tensor& onehot) {
  if (probs.rank() != 2) throw DimensionError("expected [N,K] probabilities, got " + probs.shape().to_string());
  require_same_shape(probs, onehot, "cross_entropy");
  const std::size_t k = onehot.dim(1);
  for (std::size_t n = 0; n < onehot.dim(0); ++n) {
    int ones = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const float v = onehot[n * k + j];
      if (v == 1.0f)
        ++ones;
      else if (v != 0.0f)
        ones = 2;
    }
    if (ones != 1)
      throw std::invalid_argument("label row " + std::to_string(n) + " is not a valid one-hot vector");
  }
}

}  // namespace detail

/// Categorical cross-entropy, -ln(clamp(p_true, 1e-7, 1)) averaged over the
/// batch.
inline LossValue cross_entropy(const Tensor& probs, const Tensor& onehot) {
  detail::check_onehot(probs, onehot);
  const std::size_t rows = probs.dim(0), k = probs.dim(1);
  LossValue loss;
  loss.per_sample.reserve(rows);
  double total = 0.0;
  for (std::size_t n = 0; n < rows; ++n) {
    double row_sum = 0.0, p_true = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      row_sum += probs[n * k + j];
      if (onehot[n * k + j] == 1.0f) p_true = probs[n * k + j];
    }
    if (std::abs(row_sum - 1.0) > 1e-4)
      throw std::invalid_argument("probability row " + std::to_string(n) + " sums to " +
                                  std::to_string(row_sum));
    const double l = -std::log(std::clamp(p_true, kProbabilityFloor, 1.0));
    loss.per_sample.push_back(l);
    total += l;
  }
  loss.mean_loss = total / static_cast<double>(rows);
  return loss;
}

/// Gradient of the mean cross-entropy with respect to the pre-softmax
/// logits: (probs - onehot) / N.
inline Tensor softmax_xent_backward(const Tensor& probs, const Tensor& onehot) {
  if (probs.rank() != 2) throw DimensionError("expected [N,K] probabilities, got " + probs.shape().to_string());
  require_same_shape(probs, onehot, "softmax_xent_backward");
  const float inv_n = 1.0f / static_cast<float>(probs.dim(0));
  return zip_with(probs, onehot, "softmax_xent_backward",
                  [inv_n](float p, float y) { return (p - y) * inv_n; });
}

// ---------------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

/// First/second moment accumulators for one parameter tensor.
struct AdamState {
  AdamState() = default;
  AdamState(const Shape& shape, AdamConfig cfg) : m(shape), v(shape), config(cfg) {}

  Tensor m;
  Tensor v;
  std::uint64_t t = 0;
  AdamConfig config;
};

/// One bias-corrected Adam update, in place:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
inline void adam_step(Tensor& param, const Tensor& grad, AdamState& state) {
  require_same_shape(param, grad, "adam_step");
  require_same_shape(param, state.m, "adam_step");
  require_same_shape(param, state.v, "adam_step");
  const auto& c = state.config;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  float* p = param.raw();
  float* m = state.m.raw();
  float* v = state.v.raw();
  const float* g = grad.raw();
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double gi = g[i];
    const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
    const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    const double m_hat = mi / correction1;
    const double v_hat = vi / correction2;
    p[i] = static_cast<float>(p[i] - c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon));
  }
}

}  // namespace microcnn
