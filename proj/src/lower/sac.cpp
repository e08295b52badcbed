#include <algorithm>
#include <cmath>
#include <limits>

#include "dipper/lower_level.hpp"

namespace dipper::lower {

namespace {

struct Categorical {
  nn::Matrix probs;
  nn::Matrix log_probs;  // 0 where masked
};

Categorical masked_softmax(const nn::Matrix& logits, const nn::Matrix& masks) {
  Categorical c;
  c.probs = nn::Matrix::Zero(logits.rows(), logits.cols());
  c.log_probs = nn::Matrix::Zero(logits.rows(), logits.cols());
  const bool use_mask = masks.size() > 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      if (!use_mask || masks(i, j) > 0.0) mx = std::max(mx, logits(i, j));
    }
    double sum = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      if (!use_mask || masks(i, j) > 0.0) sum += std::exp(logits(i, j) - mx);
    }
    const double lse = mx + std::log(sum);
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      if (use_mask && !(masks(i, j) > 0.0)) continue;
      c.log_probs(i, j) = logits(i, j) - lse;
      c.probs(i, j) = std::exp(c.log_probs(i, j));
    }
  }
  return c;
}

nn::Matrix row_matrix(std::span<const double> v) {
  return Eigen::Map<const nn::Matrix>(v.data(), 1, static_cast<Eigen::Index>(v.size()));
}

std::vector<double> grad_buffer(const nn::ParamVector& p) { return std::vector<double>(p.size(), 0.0); }

}  // namespace

SacLearner::SacLearner(int obs_dim, ActionSpace space, int action_dim, SacConfig config, Rng& rng)
    : obs_dim_(obs_dim), space_(space), action_dim_(action_dim), config_(config) {
  if (!(config_.gamma > 0.0 && config_.gamma < 1.0)) throw ConfigError("SAC discount must lie in (0, 1)");
  if (!(config_.polyak_tau > 0.0 && config_.polyak_tau < 1.0)) throw ConfigError("polyak tau must lie in (0, 1)");
  actor_spec_.input_dim = obs_dim;
  actor_spec_.hidden_width = config_.hidden_width;
  actor_spec_.n_hidden = config_.n_hidden;
  actor_spec_.hidden_activation = config_.activation;
  critic_spec_ = actor_spec_;
  if (space == ActionSpace::Categorical) {
    actor_spec_.output_dim = action_dim;
    actor_spec_.head = nn::OutputHead::Categorical;
    critic_spec_.output_dim = action_dim;
  } else {
    actor_spec_.output_dim = 2 * action_dim;
    actor_spec_.head = nn::OutputHead::SquashedGaussian;
    critic_spec_.input_dim = obs_dim + action_dim;
    critic_spec_.output_dim = 1;
  }
  actor_ = nn::init_params(actor_spec_, rng, 0.1);
  for (std::size_t i = 0; i < 2; ++i) {
    critics_[i] = nn::init_params(critic_spec_, rng);
    targets_[i] = critics_[i];
    critic_opts_[i] = nn::AdamState::create(critics_[i].size(), {config_.critic_lr});
  }
  actor_opt_ = nn::AdamState::create(actor_.size(), {config_.actor_lr});
}

double SacLearner::clamp_value(double v, long* clamps) const {
  const double lo = config_.min_reward / (1.0 - config_.gamma) - config_.value_margin;
  // soft values also collect the entropy bonus, bounded by the uniform policy's
  const double max_entropy = space_ == ActionSpace::Categorical ? std::log(static_cast<double>(action_dim_))
                                                                : action_dim_ * std::log(2.0);
  const double hi = config_.value_margin + config_.sac_alpha * max_entropy / (1.0 - config_.gamma);
  if (v < lo || v > hi) {
    if (clamps) ++*clamps;
    return std::clamp(v, lo, hi);
  }
  return v;
}

nn::Matrix SacLearner::critic_input(const nn::Matrix& obs, const nn::Matrix& actions) const {
  nn::Matrix x(obs.rows(), obs.cols() + actions.cols());
  x << obs, actions;
  return x;
}

std::vector<double> SacLearner::probabilities(std::span<const double> obs, std::span<const double> mask) const {
  if (space_ != ActionSpace::Categorical) throw UnsupportedConfiguration("probabilities() needs a categorical policy");
  const nn::Matrix logits = nn::forward_batch(actor_spec_, actor_, row_matrix(obs));
  const nn::Matrix m = mask.empty() ? nn::Matrix() : row_matrix(mask);
  const Categorical c = masked_softmax(logits, m);
  return {c.probs.data(), c.probs.data() + c.probs.size()};
}

int SacLearner::act_categorical(std::span<const double> obs, std::span<const double> mask, bool explore,
                                Rng& rng) const {
  const auto probs = probabilities(obs, mask);
  if (!explore) {
    return static_cast<int>(std::max_element(probs.begin(), probs.end()) - probs.begin());
  }
  if (uniform01(rng) < config_.random_eps) {
    std::vector<int> valid;
    for (int a = 0; a < action_dim_; ++a) {
      if (mask.empty() || mask[static_cast<std::size_t>(a)] > 0.0) valid.push_back(a);
    }
    return valid[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(valid.size()) - 1))];
  }
  std::discrete_distribution<int> dist(probs.begin(), probs.end());
  return dist(rng);
}

std::vector<double> SacLearner::act_gaussian(std::span<const double> obs, bool explore, Rng& rng) const {
  if (space_ != ActionSpace::Gaussian) throw UnsupportedConfiguration("act_gaussian() needs a Gaussian policy");
  const auto out = nn::forward(actor_spec_, actor_, obs);
  const std::span<const double> mean(out.data(), static_cast<std::size_t>(action_dim_));
  const std::span<const double> log_std(out.data() + action_dim_, static_cast<std::size_t>(action_dim_));
  std::vector<double> a(static_cast<std::size_t>(action_dim_));
  if (!explore) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = nn::safe_tanh(mean[i]);
    return a;
  }
  if (uniform01(rng) < config_.random_eps) {
    for (auto& v : a) v = 2.0 * uniform01(rng) - 1.0;
    return a;
  }
  a = nn::sample_squashed_gaussian(mean, log_std, rng).action;
  std::normal_distribution<double> noise(0.0, config_.noise_eps);
  for (auto& v : a) v = std::clamp(v + noise(rng), -1.0, 1.0);
  return a;
}

nn::Matrix SacLearner::q_values(int critic, const nn::Matrix& obs, const nn::Matrix& actions) const {
  const auto& p = critics_[static_cast<std::size_t>(critic)];
  if (space_ == ActionSpace::Categorical) return nn::forward_batch(critic_spec_, p, obs);
  return nn::forward_batch(critic_spec_, p, critic_input(obs, actions));
}

std::vector<double> SacLearner::soft_targets(const SacBatch& batch, Rng& rng, long* clamps) const {
  const auto n = static_cast<Eigen::Index>(batch.size());
  std::vector<double> y(batch.size());
  const double alpha = config_.sac_alpha;
  if (space_ == ActionSpace::Categorical) {
    const nn::Matrix logits = nn::forward_batch(actor_spec_, actor_, batch.next_obs);
    const Categorical pi = masked_softmax(logits, batch.next_masks);
    const nn::Matrix q1 = nn::forward_batch(critic_spec_, targets_[0], batch.next_obs);
    const nn::Matrix q2 = nn::forward_batch(critic_spec_, targets_[1], batch.next_obs);
    for (Eigen::Index i = 0; i < n; ++i) {
      double v = 0.0;
      for (Eigen::Index a = 0; a < logits.cols(); ++a) {
        const double p = pi.probs(i, a);
        if (p <= 0.0) continue;
        v += p * (std::min(q1(i, a), q2(i, a)) - alpha * pi.log_probs(i, a));
      }
      y[static_cast<std::size_t>(i)] = batch.rewards[static_cast<std::size_t>(i)] +
                                       batch.discounts[static_cast<std::size_t>(i)] * clamp_value(v, clamps);
    }
    return y;
  }
  const nn::Matrix out = nn::forward_batch(actor_spec_, actor_, batch.next_obs);
  nn::Matrix next_actions(n, action_dim_);
  std::vector<double> log_pi(batch.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::span<const double> row(out.data() + i * out.cols(), static_cast<std::size_t>(out.cols()));
    const auto mean = row.subspan(0, static_cast<std::size_t>(action_dim_));
    const auto log_std = row.subspan(static_cast<std::size_t>(action_dim_));
    const auto s = nn::sample_squashed_gaussian(mean, log_std, rng);
    for (int j = 0; j < action_dim_; ++j) next_actions(i, j) = s.action[static_cast<std::size_t>(j)];
    log_pi[static_cast<std::size_t>(i)] = nn::gaussian_log_prob_grad(mean, log_std, s.pre_squash, true).log_prob;
  }
  const nn::Matrix x = critic_input(batch.next_obs, next_actions);
  const nn::Matrix q1 = nn::forward_batch(critic_spec_, targets_[0], x);
  const nn::Matrix q2 = nn::forward_batch(critic_spec_, targets_[1], x);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v = std::min(q1(i, 0), q2(i, 0)) - alpha * log_pi[static_cast<std::size_t>(i)];
    y[static_cast<std::size_t>(i)] = batch.rewards[static_cast<std::size_t>(i)] +
                                     batch.discounts[static_cast<std::size_t>(i)] * clamp_value(v, clamps);
  }
  return y;
}

SacDiagnostics SacLearner::update(const SacBatch& batch, Rng& rng) {
  if (batch.size() == 0) throw ArgumentError("sac_update called with an empty batch");
  if (batch.discounts.size() != batch.size() || batch.obs.rows() != static_cast<Eigen::Index>(batch.size())) {
    throw ShapeError("SAC batch fields disagree in length");
  }
  SacDiagnostics d = space_ == ActionSpace::Categorical ? update_categorical(batch, rng) : update_gaussian(batch, rng);
  for (std::size_t i = 0; i < 2; ++i) nn::polyak_update(targets_[i].values, critics_[i].values, config_.polyak_tau);
  return d;
}

SacDiagnostics SacLearner::update_categorical(const SacBatch& batch, Rng& rng) {
  SacDiagnostics diag;
  const auto n = static_cast<Eigen::Index>(batch.size());
  const double inv_n = 1.0 / static_cast<double>(n);
  const std::vector<double> y = soft_targets(batch, rng, &diag.value_clamps);

  std::array<nn::Matrix, 2> q;
  for (std::size_t c = 0; c < 2; ++c) {
    nn::ForwardCache cache;
    q[c] = nn::forward_batch(critic_spec_, critics_[c], batch.obs, &cache);
    nn::Matrix dq = nn::Matrix::Zero(n, action_dim_);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int a = batch.actions[static_cast<std::size_t>(i)];
      const double err = q[c](i, a) - y[static_cast<std::size_t>(i)];
      diag.critic_loss += 0.5 * err * err * inv_n;
      dq(i, a) = err * inv_n;
      diag.mean_q += q[c](i, a) * inv_n * 0.5;
    }
    auto g = grad_buffer(critics_[c]);
    nn::backward_batch(critic_spec_, critics_[c], cache, dq, g);
    nn::adam_step(critic_opts_[c], critics_[c].values, g);
  }

  // Actor: E_s sum_a pi(a|s) (alpha log pi(a|s) - min_i Q_i(s, a)).
  nn::ForwardCache cache;
  const nn::Matrix logits = nn::forward_batch(actor_spec_, actor_, batch.obs, &cache);
  const Categorical pi = masked_softmax(logits, batch.masks);
  nn::Matrix dz = nn::Matrix::Zero(n, action_dim_);
  const double alpha = config_.sac_alpha;
  for (Eigen::Index i = 0; i < n; ++i) {
    double expected = 0.0;
    std::vector<double> f(static_cast<std::size_t>(action_dim_), 0.0);
    for (Eigen::Index a = 0; a < action_dim_; ++a) {
      if (pi.probs(i, a) <= 0.0) continue;
      f[static_cast<std::size_t>(a)] = alpha * pi.log_probs(i, a) - std::min(q[0](i, a), q[1](i, a));
      expected += pi.probs(i, a) * f[static_cast<std::size_t>(a)];
      diag.entropy -= pi.probs(i, a) * pi.log_probs(i, a) * inv_n;
    }
    diag.actor_loss += expected * inv_n;
    for (Eigen::Index a = 0; a < action_dim_; ++a) {
      dz(i, a) = pi.probs(i, a) * (f[static_cast<std::size_t>(a)] - expected) * inv_n;
    }
  }
  auto g = grad_buffer(actor_);
  nn::backward_batch(actor_spec_, actor_, cache, dz, g);
  nn::adam_step(actor_opt_, actor_.values, g);
  return diag;
}

SacDiagnostics SacLearner::update_gaussian(const SacBatch& batch, Rng& rng) {
  SacDiagnostics diag;
  const auto n = static_cast<Eigen::Index>(batch.size());
  const double inv_n = 1.0 / static_cast<double>(n);
  const std::vector<double> y = soft_targets(batch, rng, &diag.value_clamps);

  const nn::Matrix x = critic_input(batch.obs, batch.continuous_actions);
  for (std::size_t c = 0; c < 2; ++c) {
    nn::ForwardCache cache;
    const nn::Matrix q = nn::forward_batch(critic_spec_, critics_[c], x, &cache);
    nn::Matrix dq(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double err = q(i, 0) - y[static_cast<std::size_t>(i)];
      diag.critic_loss += 0.5 * err * err * inv_n;
      diag.mean_q += q(i, 0) * inv_n * 0.5;
      dq(i, 0) = err * inv_n;
    }
    auto g = grad_buffer(critics_[c]);
    nn::backward_batch(critic_spec_, critics_[c], cache, dq, g);
    nn::adam_step(critic_opts_[c], critics_[c].values, g);
  }

  // Actor: reparameterised a = tanh(mean + std * eps), loss alpha log pi - min Q.
  nn::ForwardCache actor_cache;
  const nn::Matrix out = nn::forward_batch(actor_spec_, actor_, batch.obs, &actor_cache);
  const auto d = static_cast<std::size_t>(action_dim_);
  nn::Matrix actions(n, action_dim_);
  std::vector<nn::SquashedSample> samples;
  samples.reserve(batch.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::span<const double> row(out.data() + i * out.cols(), static_cast<std::size_t>(out.cols()));
    samples.push_back(nn::sample_squashed_gaussian(row.subspan(0, d), row.subspan(d), rng));
    for (std::size_t j = 0; j < d; ++j) actions(i, static_cast<Eigen::Index>(j)) = samples.back().action[j];
  }
  const nn::Matrix xa = critic_input(batch.obs, actions);
  std::array<nn::Matrix, 2> qa;
  std::array<nn::Matrix, 2> dqa;
  for (std::size_t c = 0; c < 2; ++c) {
    nn::ForwardCache cache;
    qa[c] = nn::forward_batch(critic_spec_, critics_[c], xa, &cache);
    auto scratch = grad_buffer(critics_[c]);
    nn::Matrix dx;
    nn::backward_batch(critic_spec_, critics_[c], cache, nn::Matrix::Ones(n, 1), scratch, &dx);
    dqa[c] = dx.rightCols(action_dim_);
  }
  const double alpha = config_.sac_alpha;
  nn::Matrix dout = nn::Matrix::Zero(n, 2 * action_dim_);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::span<const double> row(out.data() + i * out.cols(), static_cast<std::size_t>(out.cols()));
    const auto& s = samples[static_cast<std::size_t>(i)];
    const std::size_t which = qa[0](i, 0) <= qa[1](i, 0) ? 0 : 1;
    const double log_pi = nn::gaussian_log_prob_grad(row.subspan(0, d), row.subspan(d), s.pre_squash, true).log_prob;
    diag.actor_loss += (alpha * log_pi - qa[which](i, 0)) * inv_n;
    diag.entropy -= log_pi * inv_n;
    for (std::size_t j = 0; j < d; ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      const double t = std::tanh(s.pre_squash[j]);
      const double jac = 1.0 - s.action[j] * s.action[j];
      const double ls = row[d + j];
      const double sigma = std::exp(nn::clamp_log_std(ls));
      const double dq_da = dqa[which](i, jj);
      dout(i, jj) = (alpha * 2.0 * t - dq_da * jac) * inv_n;
      const bool clamped = ls < nn::kLogStdMin || ls > nn::kLogStdMax;
      const double du_dls = sigma * s.noise[j];
      dout(i, static_cast<Eigen::Index>(d + j)) =
          clamped ? 0.0 : (alpha * (-1.0 + 2.0 * t * du_dls) - dq_da * jac * du_dls) * inv_n;
    }
  }
  auto g = grad_buffer(actor_);
  nn::backward_batch(actor_spec_, actor_, actor_cache, dout, g);
  nn::adam_step(actor_opt_, actor_.values, g);
  return diag;
}

}  // namespace dipper::lower
