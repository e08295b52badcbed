#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "dipper/errors.hpp"
#include "dipper/numerics.hpp"

namespace dipper::nn {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

void check_sizes(std::size_t a, std::size_t b, std::size_t c) {
  if (a != b || a != c) throw ShapeError("Gaussian mean, log_std and action differ in length");
}

// log(1 - tanh(u)^2) computed without cancellation.
double log_one_minus_tanh_sq(double u) {
  const double a = std::abs(u);
  return 2.0 * (std::numbers::ln2 - a - std::log1p(std::exp(-2.0 * a)));
}

}  // namespace

double clamp_log_std(double log_std) { return std::clamp(log_std, kLogStdMin, kLogStdMax); }

double safe_tanh(double u) {
  constexpr double kEdge = 1.0 - 1e-12;
  return std::clamp(std::tanh(u), -kEdge, kEdge);
}

double gaussian_log_prob(std::span<const double> mean, std::span<const double> log_std,
                         std::span<const double> action, bool squash) {
  check_sizes(mean.size(), log_std.size(), action.size());
  double lp = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    double u = action[i];
    if (squash) {
      if (!(action[i] > -1.0 && action[i] < 1.0)) {
        throw DomainError("squashed Gaussian action component " + std::to_string(action[i]) +
                          " is outside (-1, 1)");
      }
      u = std::atanh(action[i]);
    }
    const double ls = clamp_log_std(log_std[i]);
    const double z = (u - mean[i]) * std::exp(-ls);
    lp += -0.5 * z * z - ls - kHalfLog2Pi;
    if (squash) lp -= log_one_minus_tanh_sq(u);
  }
  return lp;
}

GaussianGrad gaussian_log_prob_grad(std::span<const double> mean, std::span<const double> log_std,
                                    std::span<const double> pre_squash, bool squash) {
  check_sizes(mean.size(), log_std.size(), pre_squash.size());
  GaussianGrad out;
  out.d_mean.resize(mean.size());
  out.d_log_std.resize(mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double ls = clamp_log_std(log_std[i]);
    const bool clamped = log_std[i] < kLogStdMin || log_std[i] > kLogStdMax;
    const double inv_std = std::exp(-ls);
    const double z = (pre_squash[i] - mean[i]) * inv_std;
    out.log_prob += -0.5 * z * z - ls - kHalfLog2Pi;
    if (squash) out.log_prob -= log_one_minus_tanh_sq(pre_squash[i]);
    out.d_mean[i] = z * inv_std;
    out.d_log_std[i] = clamped ? 0.0 : z * z - 1.0;
  }
  return out;
}

SquashedSample sample_squashed_gaussian(std::span<const double> mean, std::span<const double> log_std, Rng& rng) {
  if (mean.size() != log_std.size()) throw ShapeError("Gaussian mean and log_std differ in length");
  std::normal_distribution<double> normal(0.0, 1.0);
  SquashedSample s;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    const double eps = normal(rng);
    const double u = mean[i] + std::exp(clamp_log_std(log_std[i])) * eps;
    s.noise.push_back(eps);
    s.pre_squash.push_back(u);
    s.action.push_back(safe_tanh(u));
  }
  return s;
}

std::vector<double> log_softmax(std::span<const double> logits, std::span<const double> mask) {
  if (!mask.empty() && mask.size() != logits.size()) throw ShapeError("log_softmax mask size mismatch");
  const double neg_inf = -std::numeric_limits<double>::infinity();
  double mx = neg_inf;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (mask.empty() || mask[i] > 0.0) mx = std::max(mx, logits[i]);
  }
  if (mx == neg_inf) throw ArgumentError("log_softmax: every entry is masked");
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (mask.empty() || mask[i] > 0.0) sum += std::exp(logits[i] - mx);
  }
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = (mask.empty() || mask[i] > 0.0) ? logits[i] - lse : neg_inf;
  }
  return out;
}

}  // namespace dipper::nn
