#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <unordered_set>
#include <vector>

#include "dipper/env.hpp"
#include "dipper/errors.hpp"
#include "dipper/features.hpp"
#include "dipper/numerics.hpp"
#include "dipper/rng.hpp"

namespace dipper::lower {

// Fixed-capacity ring buffer with uniform sampling (no repeats within a batch).
template <typename T>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ArgumentError("replay buffer capacity must be positive");
  }

  void add(T item) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
    } else {
      items_[next_] = std::move(item);
    }
    next_ = (next_ + 1) % capacity_;
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }
  const T& operator[](std::size_t i) const { return items_[i]; }

  // min(n, size()) distinct indices, Floyd's algorithm.
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const {
    const std::size_t total = items_.size();
    n = std::min(n, total);
    std::vector<std::size_t> out;
    out.reserve(n);
    std::unordered_set<std::size_t> seen;
    seen.reserve(n * 2);
    for (std::size_t j = total - n; j < total; ++j) {
      const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
      const std::size_t pick = seen.contains(t) ? j : t;
      seen.insert(pick);
      out.push_back(pick);
    }
    std::shuffle(out.begin(), out.end(), rng);
    return out;
  }

  std::vector<T> sample(std::size_t n, Rng& rng) const {
    std::vector<T> out;
    for (std::size_t i : sample_indices(n, rng)) out.push_back(items_[i]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<T> items_;
};

enum class ActionSpace { Categorical, Gaussian };

struct SacConfig {
  double gamma = 0.95;
  double sac_alpha = 0.05;  // entropy weight
  double polyak_tau = 0.05;
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  double value_lr = 1e-3;
  int batch_size = 1024;
  double random_eps = 0.2;
  double noise_eps = 0.05;
  int hidden_width = 64;
  int n_hidden = 3;
  nn::Activation activation = nn::Activation::Tanh;
  // Learned values are kept inside [-1/(1-gamma) - margin, margin].
  double value_margin = 1.0;
  // Most negative per-transition reward; sets the lower end of the value range.
  double min_reward = -1.0;
};

// One SAC minibatch in feature space. For categorical actions `actions` holds
// indices and the optional masks flag valid actions; for Gaussian actions
// `continuous_actions` holds squashed actions row-wise. `discounts` already
// folds in termination: gamma^n * (1 - done).
struct SacBatch {
  nn::Matrix obs;
  nn::Matrix next_obs;
  std::vector<int> actions;
  nn::Matrix continuous_actions;
  std::vector<double> rewards;
  std::vector<double> discounts;
  nn::Matrix masks;
  nn::Matrix next_masks;

  std::size_t size() const { return rewards.size(); }
};

struct SacDiagnostics {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double mean_q = 0.0;
  double entropy = 0.0;
  long value_clamps = 0;
};

// Soft actor-critic with twin critics and Polyak-averaged targets, for either
// a categorical or a tanh-squashed Gaussian policy.
class SacLearner {
 public:
  SacLearner(int obs_dim, ActionSpace space, int action_dim, SacConfig config, Rng& rng);

  ActionSpace space() const { return space_; }
  int action_dim() const { return action_dim_; }
  int obs_dim() const { return obs_dim_; }
  const SacConfig& config() const { return config_; }

  // Action probabilities (categorical only).
  std::vector<double> probabilities(std::span<const double> obs, std::span<const double> mask = {}) const;
  int act_categorical(std::span<const double> obs, std::span<const double> mask, bool explore, Rng& rng) const;
  std::vector<double> act_gaussian(std::span<const double> obs, bool explore, Rng& rng) const;

  // Critic outputs: categorical -> one row of |A| values, Gaussian -> Q(s,a).
  nn::Matrix q_values(int critic, const nn::Matrix& obs, const nn::Matrix& actions = {}) const;

  // One gradient step on both critics and the actor, then a Polyak target
  // update. Throws ArgumentError on an empty batch.
  SacDiagnostics update(const SacBatch& batch, Rng& rng);

  // Soft Bellman targets y = r + discount * (min_i Qtarget_i - alpha log pi);
  // exposed for structural tests.
  std::vector<double> soft_targets(const SacBatch& batch, Rng& rng, long* clamps = nullptr) const;

  const nn::MlpSpec& actor_spec() const { return actor_spec_; }
  const nn::MlpSpec& critic_spec() const { return critic_spec_; }
  nn::ParamVector& actor() { return actor_; }
  const nn::ParamVector& actor() const { return actor_; }
  nn::ParamVector& critic(int i) { return critics_[static_cast<std::size_t>(i)]; }
  const nn::ParamVector& critic(int i) const { return critics_[static_cast<std::size_t>(i)]; }
  const nn::ParamVector& target(int i) const { return targets_[static_cast<std::size_t>(i)]; }

 private:
  SacDiagnostics update_categorical(const SacBatch& batch, Rng& rng);
  SacDiagnostics update_gaussian(const SacBatch& batch, Rng& rng);
  nn::Matrix critic_input(const nn::Matrix& obs, const nn::Matrix& actions) const;
  double clamp_value(double v, long* clamps) const;

  int obs_dim_;
  ActionSpace space_;
  int action_dim_;
  SacConfig config_;
  nn::MlpSpec actor_spec_;
  nn::MlpSpec critic_spec_;
  nn::ParamVector actor_;
  std::array<nn::ParamVector, 2> critics_;
  std::array<nn::ParamVector, 2> targets_;
  nn::AdamState actor_opt_;
  std::array<nn::AdamState, 2> critic_opts_;
};

struct LowerTransition {
  env::EnvState state;
  env::Goal subgoal;
  env::PrimitiveAction action;
  double reward = 0.0;
  env::EnvState next_state;
  bool done = false;
};

using LowerReplay = ReplayBuffer<LowerTransition>;

// Goal-conditioned value head V(s, g) trained by TD(0) regression against a
// Polyak-averaged copy of itself.
struct ValueHead {
  nn::MlpSpec spec;
  nn::ParamVector params;
  nn::ParamVector target;
  nn::AdamState opt;
};

struct ValueDiagnostics {
  double td_loss = 0.0;
  long clamps = 0;
};

// pi^L: SAC controller over primitive actions conditioned on (state, subgoal),
// plus the separately trained V^k head.
class LowerAgent {
 public:
  LowerAgent(const env::MazeLayout& reference_layout, env::EnvKind kind, SacConfig config,
             env::FeatureOptions features, Rng& rng);

  // With explore on, a uniform random action is taken with probability
  // random_eps, otherwise a policy sample; explore off returns the mode.
  env::PrimitiveAction act(const env::EnvState& s, const env::Goal& g, bool explore, Rng& rng) const;

  // One SAC step on a batch of lower transitions.
  SacDiagnostics sac_update(std::span<const LowerTransition> batch, Rng& rng);

  // k TD(0) steps of the value head on batches drawn from the buffer.
  ValueDiagnostics train_value_k(const LowerReplay& buffer, int k, Rng& rng);

  // V^k(s, g), clamped to the sane range.
  double value_estimate(const env::EnvState& s, const env::Goal& g) const;
  std::vector<double> value_estimates(const std::vector<std::pair<env::EnvState, env::Goal>>& queries) const;

  SacBatch make_batch(std::span<const LowerTransition> batch) const;
  std::vector<double> features(const env::EnvState& s, const env::Goal& g) const;

  SacLearner& learner() { return learner_; }
  const SacLearner& learner() const { return learner_; }
  ValueHead& value_head() { return value_; }
  const ValueHead& value_head() const { return value_; }
  const SacConfig& config() const { return config_; }
  env::EnvKind kind() const { return kind_; }
  long value_clamp_count() const { return value_clamps_; }

 private:
  env::EnvKind kind_;
  SacConfig config_;
  env::FeatureOptions features_;
  SacLearner learner_;
  ValueHead value_;
  mutable long value_clamps_ = 0;
};

int move_index(const env::PrimitiveAction& a);

// Single-goal training of the lower controller: episodes start in a random
// free cell and end on reaching the goal or after `horizon` steps.
struct FixedGoalConfig {
  int env_steps = 20000;
  int horizon = 25;
  int warmup_steps = 256;
  int update_every = 2;
  int eval_every = 2000;
  std::size_t replay_capacity = 100000;
};

struct FixedGoalResult {
  std::vector<std::pair<int, double>> curve;  // (env step, greedy success rate)
  double final_success = 0.0;
  int first_step_at_95 = -1;
  LowerReplay replay{1};
};

// Greedy success rate from every free non-goal cell.
double greedy_success_all_starts(const LowerAgent& agent, const env::MazeEnv& env,
                                 const std::shared_ptr<const env::MazeLayout>& layout, const env::Goal& goal,
                                 int horizon, Rng& rng);

FixedGoalResult train_fixed_goal(LowerAgent& agent, const env::MazeEnv& env,
                                 const std::shared_ptr<const env::MazeLayout>& layout, const env::Goal& goal,
                                 const FixedGoalConfig& config, Rng& rng);

}  // namespace dipper::lower
