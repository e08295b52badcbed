#include <algorithm>
#include <cmath>
#include <limits>

#include "dipper/dipper_core.hpp"
#include "dipper/errors.hpp"

namespace dipper::core {

namespace {

void check_lengths(std::size_t steps, std::size_t goals) {
  if (steps != goals) throw ShapeError("steps and end goals differ in length");
}

}  // namespace

// --- tabular ----------------------------------------------------------------

TabularChoiceModel::TabularChoiceModel(int n_states, int n_choices)
    : n_states_(n_states), n_choices_(n_choices), logits_(static_cast<std::size_t>(n_states) * n_choices, 0.0) {
  if (n_states <= 0 || n_choices <= 0) throw ArgumentError("tabular policy needs positive dimensions");
}

std::vector<double> TabularChoiceModel::probabilities(int state) const {
  const std::span<const double> row(logits_.data() + static_cast<std::size_t>(state) * n_choices_,
                                    static_cast<std::size_t>(n_choices_));
  auto lp = nn::log_softmax(row);
  for (auto& v : lp) v = std::exp(v);
  return lp;
}

std::vector<double> TabularChoiceModel::log_probs(std::span<const HighStep> steps,
                                                  std::span<const env::Goal> end_goals) const {
  check_lengths(steps.size(), end_goals.size());
  std::vector<double> out(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& s = steps[i];
    if (s.state_index < 0 || s.state_index >= n_states_ || s.choice < 0 || s.choice >= n_choices_) {
      throw ArgumentError("tabular step out of range");
    }
    const std::span<const double> row(logits_.data() + static_cast<std::size_t>(s.state_index) * n_choices_,
                                      static_cast<std::size_t>(n_choices_));
    out[i] = nn::log_softmax(row)[static_cast<std::size_t>(s.choice)];
  }
  return out;
}

void TabularChoiceModel::accumulate_grad(std::span<const HighStep> steps, std::span<const env::Goal> end_goals,
                                         std::span<const double> weights, std::span<double> grad) const {
  check_lengths(steps.size(), end_goals.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto& s = steps[i];
    const auto p = probabilities(s.state_index);
    double* g = grad.data() + static_cast<std::size_t>(s.state_index) * n_choices_;
    for (int c = 0; c < n_choices_; ++c) {
      g[c] += weights[i] * ((c == s.choice ? 1.0 : 0.0) - p[static_cast<std::size_t>(c)]);
    }
  }
}

// --- categorical MLP ---------------------------------------------------------

MlpChoiceModel::MlpChoiceModel(nn::MlpSpec spec, Featurizer featurizer, std::vector<double> mask, Rng& rng)
    : spec_(spec), featurizer_(std::move(featurizer)), mask_(std::move(mask)) {
  spec_.head = nn::OutputHead::Categorical;
  spec_.validate();
  if (!mask_.empty() && static_cast<int>(mask_.size()) != spec_.output_dim) {
    throw ShapeError("choice mask length differs from the output width");
  }
  params_ = nn::init_params(spec_, rng, 0.1);
}

nn::Matrix MlpChoiceModel::inputs(std::span<const HighStep> steps, std::span<const env::Goal> end_goals) const {
  check_lengths(steps.size(), end_goals.size());
  nn::Matrix x(static_cast<Eigen::Index>(steps.size()), spec_.input_dim);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto f = featurizer_(steps[i], end_goals[i]);
    if (static_cast<int>(f.size()) != spec_.input_dim) throw ShapeError("featurizer output has the wrong width");
    x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(f.data(), spec_.input_dim);
  }
  return x;
}

std::vector<double> MlpChoiceModel::log_probs(std::span<const HighStep> steps,
                                              std::span<const env::Goal> end_goals) const {
  if (steps.empty()) return {};
  const nn::Matrix z = nn::forward_batch(spec_, params_, inputs(steps, end_goals));
  std::vector<double> out(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const std::span<const double> row(z.data() + i * z.cols(), static_cast<std::size_t>(z.cols()));
    const int c = steps[i].choice;
    if (c < 0 || c >= spec_.output_dim) throw ArgumentError("choice index out of range");
    out[i] = nn::log_softmax(row, mask_)[static_cast<std::size_t>(c)];
  }
  return out;
}

void MlpChoiceModel::accumulate_grad(std::span<const HighStep> steps, std::span<const env::Goal> end_goals,
                                     std::span<const double> weights, std::span<double> grad) const {
  if (steps.empty()) return;
  nn::ForwardCache cache;
  const nn::Matrix z = nn::forward_batch(spec_, params_, inputs(steps, end_goals), &cache);
  nn::Matrix dz = nn::Matrix::Zero(z.rows(), z.cols());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const std::span<const double> row(z.data() + i * z.cols(), static_cast<std::size_t>(z.cols()));
    const auto lp = nn::log_softmax(row, mask_);
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const double p = std::isinf(lp[static_cast<std::size_t>(j)]) ? 0.0 : std::exp(lp[static_cast<std::size_t>(j)]);
      dz(static_cast<Eigen::Index>(i), j) = weights[i] * ((j == steps[i].choice ? 1.0 : 0.0) - p);
    }
  }
  nn::backward_batch(spec_, params_, cache, dz, grad);
}

std::vector<double> MlpChoiceModel::probabilities(const HighStep& step, const env::Goal& end_goal) const {
  const auto x = featurizer_(step, end_goal);
  auto lp = nn::log_softmax(nn::forward(spec_, params_, x), mask_);
  for (auto& v : lp) v = std::isinf(v) ? 0.0 : std::exp(v);
  return lp;
}

int MlpChoiceModel::sample(const HighStep& step, const env::Goal& end_goal, Rng& rng) const {
  const auto p = probabilities(step, end_goal);
  return std::discrete_distribution<int>(p.begin(), p.end())(rng);
}

int MlpChoiceModel::greedy(const HighStep& step, const env::Goal& end_goal) const {
  const auto p = probabilities(step, end_goal);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

// --- squashed Gaussian over a goal box -----------------------------------------

GaussianGoalModel::GaussianGoalModel(nn::MlpSpec spec, Featurizer featurizer, env::Point lo, env::Point hi, Rng& rng)
    : spec_(spec), featurizer_(std::move(featurizer)), lo_(lo), hi_(hi) {
  spec_.head = nn::OutputHead::SquashedGaussian;
  spec_.output_dim = 4;
  spec_.validate();
  if (!(hi.x > lo.x && hi.y > lo.y)) throw ArgumentError("goal box must have positive extent");
  params_ = nn::init_params(spec_, rng, 0.1);
}

std::array<double, 2> GaussianGoalModel::to_unit(const env::Goal& g) const {
  constexpr double kEdge = 1.0 - 1e-6;
  return {std::clamp(2.0 * (g.x - lo_.x) / (hi_.x - lo_.x) - 1.0, -kEdge, kEdge),
          std::clamp(2.0 * (g.y - lo_.y) / (hi_.y - lo_.y) - 1.0, -kEdge, kEdge)};
}

env::Goal GaussianGoalModel::from_unit(std::span<const double> u) const {
  return {lo_.x + 0.5 * (u[0] + 1.0) * (hi_.x - lo_.x), lo_.y + 0.5 * (u[1] + 1.0) * (hi_.y - lo_.y)};
}

std::vector<double> GaussianGoalModel::log_probs(std::span<const HighStep> steps,
                                                 std::span<const env::Goal> end_goals) const {
  check_lengths(steps.size(), end_goals.size());
  std::vector<double> out(steps.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto o = nn::forward(spec_, params_, featurizer_(steps[i], end_goals[i]));
    const auto u = to_unit(steps[i].subgoal);
    out[i] = nn::gaussian_log_prob(std::span<const double>(o.data(), 2), std::span<const double>(o.data() + 2, 2), u,
                                   true);
  }
  return out;
}

void GaussianGoalModel::accumulate_grad(std::span<const HighStep> steps, std::span<const env::Goal> end_goals,
                                        std::span<const double> weights, std::span<double> grad) const {
  check_lengths(steps.size(), end_goals.size());
  if (steps.empty()) return;
  nn::Matrix x(static_cast<Eigen::Index>(steps.size()), spec_.input_dim);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto f = featurizer_(steps[i], end_goals[i]);
    x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(f.data(), spec_.input_dim);
  }
  nn::ForwardCache cache;
  const nn::Matrix o = nn::forward_batch(spec_, params_, x, &cache);
  nn::Matrix d(o.rows(), 4);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const std::array<double, 2> mean{o(r, 0), o(r, 1)}, log_std{o(r, 2), o(r, 3)};
    const auto u = to_unit(steps[i].subgoal);
    const std::array<double, 2> pre{std::atanh(u[0]), std::atanh(u[1])};
    const auto g = nn::gaussian_log_prob_grad(mean, log_std, pre, true);
    for (int j = 0; j < 2; ++j) {
      d(r, j) = weights[i] * g.d_mean[static_cast<std::size_t>(j)];
      d(r, 2 + j) = weights[i] * g.d_log_std[static_cast<std::size_t>(j)];
    }
  }
  nn::backward_batch(spec_, params_, cache, d, grad);
}

env::Goal GaussianGoalModel::sample(const HighStep& step, const env::Goal& end_goal, Rng& rng) const {
  const auto o = nn::forward(spec_, params_, featurizer_(step, end_goal));
  const auto s = nn::sample_squashed_gaussian(std::span<const double>(o.data(), 2),
                                              std::span<const double>(o.data() + 2, 2), rng);
  return from_unit(s.action);
}

env::Goal GaussianGoalModel::greedy(const HighStep& step, const env::Goal& end_goal) const {
  const auto o = nn::forward(spec_, params_, featurizer_(step, end_goal));
  const std::array<double, 2> u{nn::safe_tanh(o[0]), nn::safe_tanh(o[1])};
  return from_unit(u);
}

// --- reference ---------------------------------------------------------------

std::vector<double> reference_policy(std::span<const double> lower_value, std::span<const double> lower_value_opt,
                                     double m) {
  if (lower_value.empty()) throw ArgumentError("reference policy over an empty goal set");
  if (lower_value.size() != lower_value_opt.size()) throw ShapeError("value tables differ in length");
  std::vector<double> e(lower_value.size());
  for (std::size_t g = 0; g < e.size(); ++g) e[g] = m * (lower_value[g] - lower_value_opt[g]);
  auto lp = nn::log_softmax(e);
  for (auto& v : lp) v = std::exp(v);
  return lp;
}

}  // namespace dipper::core
