#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dipper/env.hpp"
#include "dipper/features.hpp"
#include "dipper/lower_level.hpp"
#include "dipper/numerics.hpp"
#include "dipper/preference.hpp"
#include "dipper/rng.hpp"

namespace dipper::core {

using pref::HighStep;
using pref::PreferencePair;

// A policy whose log-probabilities of recorded choices can be evaluated and
// differentiated in batches.
class ChoiceModel {
 public:
  virtual ~ChoiceModel() = default;
  virtual std::span<double> params() = 0;
  virtual std::span<const double> params() const = 0;
  // log pi(choice_i | step_i, end_goal_i) for each i.
  virtual std::vector<double> log_probs(std::span<const HighStep> steps, std::span<const env::Goal> end_goals) const = 0;
  // grad += sum_i weights_i * d log pi(choice_i | ...) / d params
  virtual void accumulate_grad(std::span<const HighStep> steps, std::span<const env::Goal> end_goals,
                               std::span<const double> weights, std::span<double> grad) const = 0;
};

// Free logits table [state][choice]; the unconstrained tabular policy.
class TabularChoiceModel : public ChoiceModel {
 public:
  TabularChoiceModel(int n_states, int n_choices);
  std::span<double> params() override { return logits_; }
  std::span<const double> params() const override { return logits_; }
  std::vector<double> log_probs(std::span<const HighStep> steps, std::span<const env::Goal> end_goals) const override;
  void accumulate_grad(std::span<const HighStep> steps, std::span<const env::Goal> end_goals,
                       std::span<const double> weights, std::span<double> grad) const override;
  std::vector<double> probabilities(int state) const;
  int n_states() const { return n_states_; }
  int n_choices() const { return n_choices_; }

 private:
  int n_states_;
  int n_choices_;
  std::vector<double> logits_;
};

using Featurizer = std::function<std::vector<double>(const HighStep&, const env::Goal&)>;

// Categorical MLP policy over a fixed choice set with an optional validity
// mask (1 = allowed).
class MlpChoiceModel : public ChoiceModel {
 public:
  MlpChoiceModel(nn::MlpSpec spec, Featurizer featurizer, std::vector<double> mask, Rng& rng);
  std::span<double> params() override { return params_.values; }
  std::span<const double> params() const override { return params_.values; }
  std::vector<double> log_probs(std::span<const HighStep> steps, std::span<const env::Goal> end_goals) const override;
  void accumulate_grad(std::span<const HighStep> steps, std::span<const env::Goal> end_goals,
                       std::span<const double> weights, std::span<double> grad) const override;

  std::vector<double> probabilities(const HighStep& step, const env::Goal& end_goal) const;
  int sample(const HighStep& step, const env::Goal& end_goal, Rng& rng) const;
  int greedy(const HighStep& step, const env::Goal& end_goal) const;

  const nn::MlpSpec& spec() const { return spec_; }
  const nn::ParamVector& param_vector() const { return params_; }
  nn::ParamVector& param_vector() { return params_; }
  const std::vector<double>& mask() const { return mask_; }

 private:
  nn::Matrix inputs(std::span<const HighStep> steps, std::span<const env::Goal> end_goals) const;

  nn::MlpSpec spec_;
  Featurizer featurizer_;
  std::vector<double> mask_;
  nn::ParamVector params_;
};

// Tanh-squashed Gaussian policy over a continuous goal box [lo, hi]^2. The
// recorded subgoal is mapped back into (-1, 1) to evaluate its density.
class GaussianGoalModel : public ChoiceModel {
 public:
  GaussianGoalModel(nn::MlpSpec spec, Featurizer featurizer, env::Point lo, env::Point hi, Rng& rng);
  std::span<double> params() override { return params_.values; }
  std::span<const double> params() const override { return params_.values; }
  std::vector<double> log_probs(std::span<const HighStep> steps, std::span<const env::Goal> end_goals) const override;
  void accumulate_grad(std::span<const HighStep> steps, std::span<const env::Goal> end_goals,
                       std::span<const double> weights, std::span<double> grad) const override;

  env::Goal sample(const HighStep& step, const env::Goal& end_goal, Rng& rng) const;
  env::Goal greedy(const HighStep& step, const env::Goal& end_goal) const;

 private:
  std::array<double, 2> to_unit(const env::Goal& g) const;
  env::Goal from_unit(std::span<const double> u) const;

  nn::MlpSpec spec_;
  Featurizer featurizer_;
  env::Point lo_, hi_;
  nn::ParamVector params_;
};

// softmax_g of m * (V_L - V*_L)(s, g); throws ArgumentError on an empty set.
std::vector<double> reference_policy(std::span<const double> lower_value, std::span<const double> lower_value_opt,
                                     double m);

// Per-step offset added to alpha * log pi inside the preference logit.
using StepOffset = std::function<double(const HighStep&, const env::Goal&)>;

struct LossResult {
  double loss = 0.0;            // mean over pairs
  std::vector<double> logits;   // per-pair preference logit z
};

// Shared preference objective: with
//   z = sum_t [alpha log pi(g1_t|s1_t) + c(s1_t, g1_t)] - sum_t [alpha log pi(g2_t|s2_t) + c(s2_t, g2_t)]
// the loss per pair is -y1 log sigma(z) - y2 log sigma(-z). When grad is non-empty
// the gradient of the mean loss is accumulated into it. length_normalize
// divides each trajectory sum by its number of steps.
LossResult preference_loss(const ChoiceModel& model, std::span<const PreferencePair> pairs, double alpha,
                           const StepOffset& offset, std::span<double> grad = {}, bool length_normalize = false);

// Flat DPO: c = -alpha log pi_ref.
LossResult dpo_flat_loss(const ChoiceModel& model, const StepOffset& reference_log_prob,
                         std::span<const PreferencePair> pairs, double alpha, std::span<double> grad = {},
                         bool length_normalize = false);

// Full objective with exact lower values: c = -lambda (V_L - V*_L)(s, g).
LossResult dipper_loss_full(const ChoiceModel& model, const StepOffset& lower_value_gap,
                            std::span<const PreferencePair> pairs, double alpha, double lambda,
                            std::span<double> grad = {}, bool length_normalize = false);

// Practical objective: c = +lambda V^k(s, g), V^k treated as a constant.
LossResult dipper_loss_practical(const ChoiceModel& model, const StepOffset& value_k,
                                 std::span<const PreferencePair> pairs, double alpha, double lambda,
                                 std::span<double> grad = {}, bool length_normalize = false);

// Score-function gradient with the sigmoid weight placed inside the
// per-step sum:
//   -alpha sum_t sigma(rhat(tau2_t) - rhat(tau1_t)) [grad log pi(g1_t) - grad log pi(g2_t)]
// with rhat = alpha log pi - lambda (V_L - V*_L). Averaged over pairs, using
// only the preferred orientation of each pair (ties contribute half of each).
std::vector<double> analytic_gradient_stepwise(const ChoiceModel& model, const StepOffset& lower_value_gap,
                                               std::span<const PreferencePair> pairs, double alpha, double lambda);

// --- training loop --------------------------------------------------------

enum class Variant { Dipper, DipperNoV, DpoFlat, Hier, Flat };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

enum class OracleMode { Scripted, Human };

struct DipperConfig {
  Variant variant = Variant::Dipper;
  double kl_alpha = 0.1;
  double lambda = 0.1;
  int value_steps = 10;           // k TD steps per higher update
  long total_steps = 200000;
  long eval_every = 5000;
  int eval_episodes = 20;
  long relabel_every = 2000;
  int reward_batch_size = 50;
  int recent_episodes = 100;
  std::size_t min_labeled_pairs = 100;
  int higher_update_every = 10;
  int higher_batch_pairs = 32;
  double higher_lr = 1e-3;
  double higher_random_eps = 0.1;
  // Preference-trained policies act by sampling during evaluation; false uses the mode.
  bool eval_sample_policy = true;
  bool length_normalize = false;
  int lower_update_every = 1;
  int lower_warmup = 1000;
  std::size_t replay_capacity = 1000000;
  double tie_tol = 0.25;
  bool terminate_on_goal = true;
  bool randomize_layout = false;
  bool randomize_goal = false;
  bool condition_on_end_goal = false;
  OracleMode oracle = OracleMode::Scripted;
  int human_timeout_ms = 60000;
  lower::SacConfig sac;
  env::FeatureOptions features;
  env::EnvConfig env;

  // Throws ConfigError on out-of-range values.
  void validate() const;
};

struct MetricsRow {
  long step = 0;
  std::uint64_t seed = 0;
  double success_rate = 0.0;
  double loss_higher = 0.0;
  double loss_lower_critic = 0.0;
  double mean_vk = 0.0;
  std::size_t pairs_labeled = 0;
};

struct RunHooks {
  // Called after each evaluation row.
  std::function<void(const MetricsRow&)> on_metrics;
  // Shared dataset (e.g. served over HTTP); the loop creates an in-memory
  // store when null.
  pref::PreferenceStore* store = nullptr;
  // Directory for checkpoints at the end of the run; empty disables.
  std::string checkpoint_dir;
};

struct RunResult {
  std::vector<MetricsRow> metrics;
  double final_success = 0.0;
  long value_clamps = 0;
};

// Algorithm loop for one seed. Throws DivergenceError on non-finite losses.
RunResult train_dipper(const DipperConfig& config, std::uint64_t seed, const RunHooks& hooks = {});

// Sparse higher reward summed over one subgoal interval:
// sum over the primitive steps of -1{||achieved - end_goal|| > epsilon}.
double hier_interval_reward(std::span<const env::Point> achieved, const env::Goal& end_goal, double epsilon);

}  // namespace dipper::core
