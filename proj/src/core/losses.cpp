#include <cmath>

#include "dipper/dipper_core.hpp"
#include "dipper/errors.hpp"

namespace dipper::core {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

const pref::Label& require_label(const PreferencePair& p) {
  if (!p.y) throw ArgumentError("preference loss needs labeled pairs");
  return *p.y;
}

// Steps of every trajectory laid out contiguously: pair i owns
// [offsets[2i], offsets[2i+1]) for tau1 and [offsets[2i+1], offsets[2i+2]) for tau2.
struct Flattened {
  std::vector<HighStep> steps;
  std::vector<env::Goal> goals;
  std::vector<std::size_t> offsets{0};
};

Flattened flatten(std::span<const PreferencePair> pairs) {
  Flattened f;
  for (const auto& p : pairs) {
    for (const auto* tau : {&p.tau1, &p.tau2}) {
      for (const auto& s : tau->steps) {
        f.steps.push_back(s);
        f.goals.push_back(tau->end_goal);
      }
      f.offsets.push_back(f.steps.size());
    }
  }
  return f;
}

}  // namespace

LossResult preference_loss(const ChoiceModel& model, std::span<const PreferencePair> pairs, double alpha,
                           const StepOffset& offset, std::span<double> grad, bool length_normalize) {
  LossResult out;
  if (pairs.empty()) return out;
  const Flattened f = flatten(pairs);
  const auto lp = model.log_probs(f.steps, f.goals);
  std::vector<double> offsets(f.steps.size());
  for (std::size_t i = 0; i < f.steps.size(); ++i) offsets[i] = offset ? offset(f.steps[i], f.goals[i]) : 0.0;

  std::vector<double> weights(grad.empty() ? 0 : f.steps.size(), 0.0);
  const double inv_pairs = 1.0 / static_cast<double>(pairs.size());
  out.logits.resize(pairs.size());
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto& y = require_label(pairs[p]);
    std::array<double, 2> sums{0.0, 0.0};
    std::array<double, 2> scale{1.0, 1.0};
    for (int t = 0; t < 2; ++t) {
      const std::size_t lo = f.offsets[2 * p + t], hi = f.offsets[2 * p + t + 1];
      for (std::size_t i = lo; i < hi; ++i) sums[t] += alpha * lp[i] + offsets[i];
      if (length_normalize && hi > lo) {
        scale[t] = 1.0 / static_cast<double>(hi - lo);
        sums[t] *= scale[t];
      }
    }
    const double z = sums[0] - sums[1];
    out.logits[p] = z;
    double loss = 0.0;
    if (y[0] != 0.0) loss -= y[0] * pref::log_sigmoid(z);
    if (y[1] != 0.0) loss -= y[1] * pref::log_sigmoid(-z);
    out.loss += loss * inv_pairs;
    if (grad.empty()) continue;
    // dL/dz for L = -y1 log sigma(z) - y2 log sigma(-z)
    const double dz = (-y[0] * sigmoid(-z) + y[1] * sigmoid(z)) * inv_pairs;
    for (int t = 0; t < 2; ++t) {
      const double sign = t == 0 ? 1.0 : -1.0;
      for (std::size_t i = f.offsets[2 * p + t]; i < f.offsets[2 * p + t + 1]; ++i) {
        weights[i] = sign * alpha * scale[t] * dz;
      }
    }
  }
  if (!grad.empty()) model.accumulate_grad(f.steps, f.goals, weights, grad);
  return out;
}

LossResult dpo_flat_loss(const ChoiceModel& model, const StepOffset& reference_log_prob,
                         std::span<const PreferencePair> pairs, double alpha, std::span<double> grad,
                         bool length_normalize) {
  const StepOffset c = [&](const HighStep& s, const env::Goal& g) { return -alpha * reference_log_prob(s, g); };
  return preference_loss(model, pairs, alpha, c, grad, length_normalize);
}

LossResult dipper_loss_full(const ChoiceModel& model, const StepOffset& lower_value_gap,
                            std::span<const PreferencePair> pairs, double alpha, double lambda, std::span<double> grad,
                            bool length_normalize) {
  if (!lower_value_gap) throw UnsupportedConfiguration("full objective needs exact lower value tables");
  const StepOffset c = [&](const HighStep& s, const env::Goal& g) { return -lambda * lower_value_gap(s, g); };
  return preference_loss(model, pairs, alpha, c, grad, length_normalize);
}

LossResult dipper_loss_practical(const ChoiceModel& model, const StepOffset& value_k,
                                 std::span<const PreferencePair> pairs, double alpha, double lambda,
                                 std::span<double> grad, bool length_normalize) {
  const StepOffset c = [&](const HighStep& s, const env::Goal& g) {
    return lambda == 0.0 ? 0.0 : lambda * value_k(s, g);
  };
  return preference_loss(model, pairs, alpha, c, grad, length_normalize);
}

std::vector<double> analytic_gradient_stepwise(const ChoiceModel& model, const StepOffset& lower_value_gap,
                                               std::span<const PreferencePair> pairs, double alpha, double lambda) {
  std::vector<double> grad(model.params().size(), 0.0);
  if (pairs.empty()) return grad;
  const double inv_pairs = 1.0 / static_cast<double>(pairs.size());
  for (const auto& p : pairs) {
    const auto& y = require_label(p);
    const std::size_t n = std::min(p.tau1.steps.size(), p.tau2.steps.size());
    for (int orient = 0; orient < 2; ++orient) {
      const double w = y[static_cast<std::size_t>(orient)];
      if (w == 0.0) continue;
      const auto& win = orient == 0 ? p.tau1 : p.tau2;
      const auto& lose = orient == 0 ? p.tau2 : p.tau1;
      std::vector<HighStep> steps;
      std::vector<env::Goal> goals;
      for (std::size_t t = 0; t < n; ++t) {
        steps.push_back(win.steps[t]);
        goals.push_back(win.end_goal);
      }
      for (std::size_t t = 0; t < n; ++t) {
        steps.push_back(lose.steps[t]);
        goals.push_back(lose.end_goal);
      }
      const auto lp = model.log_probs(steps, goals);
      std::vector<double> weights(2 * n);
      for (std::size_t t = 0; t < n; ++t) {
        const double r_win = alpha * lp[t] - lambda * lower_value_gap(steps[t], goals[t]);
        const double r_lose = alpha * lp[n + t] - lambda * lower_value_gap(steps[n + t], goals[n + t]);
        const double s = sigmoid(r_lose - r_win);
        weights[t] = -alpha * s * w * inv_pairs;
        weights[n + t] = alpha * s * w * inv_pairs;
      }
      model.accumulate_grad(steps, goals, weights, grad);
    }
  }
  return grad;
}

}  // namespace dipper::core
