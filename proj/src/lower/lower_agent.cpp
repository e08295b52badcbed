#include <algorithm>
#include <cmath>

#include "dipper/lower_level.hpp"

namespace dipper::lower {

int move_index(const env::PrimitiveAction& a) {
  if (const auto* m = std::get_if<env::Move>(&a)) return static_cast<int>(*m);
  throw ArgumentError("expected a discrete move");
}

namespace {

ValueHead make_value_head(int input_dim, const SacConfig& cfg, Rng& rng) {
  ValueHead v;
  v.spec.input_dim = input_dim;
  v.spec.hidden_width = cfg.hidden_width;
  v.spec.n_hidden = cfg.n_hidden;
  v.spec.output_dim = 1;
  v.spec.hidden_activation = cfg.activation;
  v.params = nn::init_params(v.spec, rng);
  // zero output layer so an untrained head evaluates to exactly 0
  const auto& last = v.params.shape_table.back();
  const std::size_t last_size = static_cast<std::size_t>(last.in) * last.out + last.out;
  std::fill(v.params.values.end() - static_cast<std::ptrdiff_t>(last_size), v.params.values.end(), 0.0);
  v.target = v.params;
  v.opt = nn::AdamState::create(v.params.size(), {cfg.value_lr});
  return v;
}

}  // namespace

LowerAgent::LowerAgent(const env::MazeLayout& reference_layout, env::EnvKind kind, SacConfig config,
                       env::FeatureOptions features, Rng& rng)
    : kind_(kind),
      config_(config),
      features_(features),
      learner_(env::lower_feature_dim(reference_layout, features),
               kind == env::EnvKind::Discrete ? ActionSpace::Categorical : ActionSpace::Gaussian,
               kind == env::EnvKind::Discrete ? env::kMoveCount : 2, config, rng),
      value_(make_value_head(env::lower_feature_dim(reference_layout, features), config, rng)) {}

std::vector<double> LowerAgent::features(const env::EnvState& s, const env::Goal& g) const {
  return env::lower_features(s, g, features_);
}

env::PrimitiveAction LowerAgent::act(const env::EnvState& s, const env::Goal& g, bool explore, Rng& rng) const {
  const auto x = features(s, g);
  if (kind_ == env::EnvKind::Discrete) return static_cast<env::Move>(learner_.act_categorical(x, {}, explore, rng));
  const auto a = learner_.act_gaussian(x, explore, rng);
  return env::Offset{a[0], a[1]};
}

SacBatch LowerAgent::make_batch(std::span<const LowerTransition> batch) const {
  SacBatch b;
  const auto n = static_cast<Eigen::Index>(batch.size());
  if (n == 0) return b;
  const auto dim = static_cast<Eigen::Index>(learner_.obs_dim());
  b.obs.resize(n, dim);
  b.next_obs.resize(n, dim);
  if (kind_ == env::EnvKind::Continuous) b.continuous_actions.resize(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = batch[static_cast<std::size_t>(i)];
    const auto x = features(t.state, t.subgoal);
    const auto xn = features(t.next_state, t.subgoal);
    b.obs.row(i) = Eigen::Map<const Eigen::RowVectorXd>(x.data(), dim);
    b.next_obs.row(i) = Eigen::Map<const Eigen::RowVectorXd>(xn.data(), dim);
    if (kind_ == env::EnvKind::Discrete) {
      b.actions.push_back(move_index(t.action));
    } else {
      const auto& o = std::get<env::Offset>(t.action);
      b.continuous_actions(i, 0) = std::clamp(o.dx, -1.0, 1.0);
      b.continuous_actions(i, 1) = std::clamp(o.dy, -1.0, 1.0);
    }
    b.rewards.push_back(t.reward);
    b.discounts.push_back(t.done ? 0.0 : config_.gamma);
  }
  return b;
}

SacDiagnostics LowerAgent::sac_update(std::span<const LowerTransition> batch, Rng& rng) {
  if (batch.empty()) throw ArgumentError("sac_update called with an empty batch");
  return learner_.update(make_batch(batch), rng);
}

ValueDiagnostics LowerAgent::train_value_k(const LowerReplay& buffer, int k, Rng& rng) {
  ValueDiagnostics diag;
  if (k <= 0) return diag;
  if (buffer.empty()) throw ArgumentError("train_value_k needs a non-empty buffer");
  const double lo = config_.min_reward / (1.0 - config_.gamma) - config_.value_margin;
  const double hi = config_.value_margin;
  for (int step = 0; step < k; ++step) {
    const auto idx = buffer.sample_indices(static_cast<std::size_t>(config_.batch_size), rng);
    std::vector<LowerTransition> batch;
    batch.reserve(idx.size());
    for (auto i : idx) batch.push_back(buffer[i]);
    const SacBatch b = make_batch(batch);
    const auto n = static_cast<Eigen::Index>(batch.size());
    const nn::Matrix next_v = nn::forward_batch(value_.spec, value_.target, b.next_obs);
    nn::ForwardCache cache;
    const nn::Matrix v = nn::forward_batch(value_.spec, value_.params, b.obs, &cache);
    nn::Matrix dv(n, 1);
    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double nv = next_v(i, 0);
      if (nv < lo || nv > hi) {
        ++diag.clamps;
        nv = std::clamp(nv, lo, hi);
      }
      const double y = b.rewards[static_cast<std::size_t>(i)] + b.discounts[static_cast<std::size_t>(i)] * nv;
      const double err = v(i, 0) - y;
      loss += 0.5 * err * err / static_cast<double>(n);
      dv(i, 0) = err / static_cast<double>(n);
    }
    std::vector<double> g(value_.params.size(), 0.0);
    nn::backward_batch(value_.spec, value_.params, cache, dv, g);
    nn::adam_step(value_.opt, value_.params.values, g);
    nn::polyak_update(value_.target.values, value_.params.values, config_.polyak_tau);
    diag.td_loss = loss;
  }
  value_clamps_ += diag.clamps;
  return diag;
}

double LowerAgent::value_estimate(const env::EnvState& s, const env::Goal& g) const {
  return value_estimates({{s, g}}).front();
}

std::vector<double> LowerAgent::value_estimates(
    const std::vector<std::pair<env::EnvState, env::Goal>>& queries) const {
  if (queries.empty()) return {};
  const auto dim = static_cast<Eigen::Index>(learner_.obs_dim());
  nn::Matrix x(static_cast<Eigen::Index>(queries.size()), dim);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    const auto f = features(queries[i].first, queries[i].second);
    x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(f.data(), dim);
  }
  const nn::Matrix v = nn::forward_batch(value_.spec, value_.params, x);
  const double lo = config_.min_reward / (1.0 - config_.gamma) - config_.value_margin;
  const double hi = config_.value_margin;
  std::vector<double> out(queries.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    double val = v(static_cast<Eigen::Index>(i), 0);
    if (val < lo || val > hi) {
      ++value_clamps_;
      val = std::clamp(val, lo, hi);
    }
    out[i] = val;
  }
  return out;
}

}  // namespace dipper::lower
