#include <cmath>

#include "dipper/errors.hpp"
#include "dipper/numerics.hpp"

namespace dipper::nn {

AdamState AdamState::create(std::size_t n, AdamConfig config) {
  AdamState s;
  s.first_moment.assign(n, 0.0);
  s.second_moment.assign(n, 0.0);
  s.config = config;
  return s;
}

void adam_step(AdamState& state, std::span<double> params, std::span<const double> gradient) {
  if (params.size() != gradient.size() || state.first_moment.size() != params.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment lengths differ");
  }
  const auto& c = state.config;
  ++state.step_count;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = gradient[i];
    double& m = state.first_moment[i];
    double& v = state.second_moment[i];
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g * g;
    params[i] -= c.lr * (m / bc1) / (std::sqrt(v / bc2) + c.eps_hat);
  }
}

void polyak_update(std::span<double> target, std::span<const double> source, double tau) {
  if (target.size() != source.size()) throw ShapeError("polyak_update: size mismatch");
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = (1.0 - tau) * target[i] + tau * source[i];
}

bool all_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace dipper::nn
