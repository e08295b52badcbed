#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "dipper/dipper_core.hpp"
#include "dipper/errors.hpp"
#include "dipper/tabular_oracle.hpp"
#include "test_support.hpp"

using namespace dipper;
using namespace dipper::core;

namespace {

constexpr int kStates = 6;
constexpr int kChoices = 4;

HighStep tab_step(int s, int c) {
  HighStep h;
  h.state_index = s;
  h.choice = c;
  h.position = {static_cast<double>(s % 3), static_cast<double>(s / 3)};
  h.subgoal = {0.25 * c - 0.4, 0.1 * s - 0.3};
  return h;
}

pref::HighTrajectory random_traj(Rng& rng, int length) {
  pref::HighTrajectory t;
  for (int i = 0; i < length; ++i) t.steps.push_back(tab_step(uniform_int(rng, 0, kStates - 1), uniform_int(rng, 0, kChoices - 1)));
  t.end_goal = {1.0, 2.0};
  t.layout_hash = "T";
  return t;
}

std::vector<PreferencePair> random_pairs(Rng& rng, int n, int min_len, int max_len) {
  const pref::Label kinds[] = {{1.0, 0.0}, {0.0, 1.0}, {0.5, 0.5}};
  std::vector<PreferencePair> out;
  for (int i = 0; i < n; ++i) {
    PreferencePair p;
    p.pair_id = i;
    p.tau1 = random_traj(rng, uniform_int(rng, min_len, max_len));
    p.tau2 = random_traj(rng, uniform_int(rng, min_len, max_len));
    p.y = kinds[uniform_int(rng, 0, 2)];
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<double> step_features(const HighStep& s, const env::Goal& g) {
  return {0.3 * s.position.x - 0.2, 0.5 * s.position.y, std::sin(1.0 + s.state_index), g.x * 0.1};
}

nn::MlpSpec small_spec(int out) {
  nn::MlpSpec spec;
  spec.input_dim = 4;
  spec.hidden_width = 5;
  spec.n_hidden = 2;
  spec.output_dim = out;
  return spec;
}

void randomize(ChoiceModel& m, Rng& rng, double scale) {
  for (auto& v : m.params()) v = scale * (2.0 * uniform01(rng) - 1.0);
}

const StepOffset kGap = [](const HighStep& s, const env::Goal&) { return -0.3 * s.state_index - 0.7 * s.choice; };
const StepOffset kValueK = [](const HighStep& s, const env::Goal&) { return -1.0 - 0.5 * s.choice + 0.2 * s.state_index; };
const StepOffset kRefLogProb = [](const HighStep& s, const env::Goal&) { return -1.0 - 0.1 * s.choice; };

using LossFn = std::function<LossResult(const ChoiceModel&, std::span<const PreferencePair>, std::span<double>)>;

std::vector<std::pair<std::string, LossFn>> all_losses(bool normalize) {
  return {
      {"flat_dpo",
       [=](const ChoiceModel& m, std::span<const PreferencePair> p, std::span<double> g) {
         return dpo_flat_loss(m, kRefLogProb, p, 0.7, g, normalize);
       }},
      {"full",
       [=](const ChoiceModel& m, std::span<const PreferencePair> p, std::span<double> g) {
         return dipper_loss_full(m, kGap, p, 0.4, 0.8, g, normalize);
       }},
      {"practical",
       [=](const ChoiceModel& m, std::span<const PreferencePair> p, std::span<double> g) {
         return dipper_loss_practical(m, kValueK, p, 1.3, 0.3, g, normalize);
       }},
  };
}

// Finite-difference check of every loss on one model; returns the worst relative error.
double worst_fd_error(ChoiceModel& model, std::span<const PreferencePair> pairs, bool normalize) {
  double worst = 0.0;
  for (const auto& [name, fn] : all_losses(normalize)) {
    std::vector<double> grad(model.params().size(), 0.0);
    fn(model, pairs, grad);
    const std::vector<double> x0(model.params().begin(), model.params().end());
    const auto fd = dipper::testing::central_differences(
        [&](std::span<const double> x) {
          std::copy(x.begin(), x.end(), model.params().begin());
          return fn(model, pairs, {}).loss;
        },
        x0, 1e-5);
    std::copy(x0.begin(), x0.end(), model.params().begin());
    worst = std::max(worst, dipper::testing::max_relative_error(grad, fd, 1e-7));
  }
  return worst;
}

}  // namespace

TEST(ReferencePolicy, TwoPointSoftmax) {
  const std::vector<double> vl{-2.0, -3.0}, vopt{-2.0, -2.0};
  const auto p = reference_policy(vl, vopt, 1.0);
  EXPECT_NEAR(p[0], 0.731059, 1e-6);
  EXPECT_NEAR(p[1], 0.268941, 1e-6);
}

TEST(ReferencePolicy, ZeroWeightIsUniformAndLargeWeightConcentrates) {
  const std::vector<double> vl{-1.0, -4.0, -2.5}, vopt{-1.0, -1.0, -1.0};
  for (double v : reference_policy(vl, vopt, 0.0)) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(reference_policy(vl, vopt, 200.0)[0], 1.0, 1e-12);
  EXPECT_THROW(reference_policy({}, {}, 1.0), ArgumentError);
  EXPECT_THROW(reference_policy(vl, std::vector<double>{0.0}, 1.0), ShapeError);
}

TEST(ReferencePolicy, MatchesTabularOracle) {
  Rng rng = split_stream(1, "ref");
  const auto mdp = oracle::random_goal_mdp(5, 4, rng);
  const auto table = oracle::primitive_reference(mdp, 0.8);
  for (int s = 0; s < mdp.n_states; ++s) {
    const auto p = reference_policy(mdp.lower_value[s], mdp.lower_value_opt[s], 0.8);
    for (int g = 0; g < mdp.n_goals; ++g) EXPECT_NEAR(p[g], table.probs[s][g], 1e-14);
  }
}

TEST(ChoiceModels, TabularGradientMatchesFiniteDifferences) {
  Rng rng = split_stream(2, "fd");
  for (int trial = 0; trial < 10; ++trial) {
    TabularChoiceModel m(kStates, kChoices);
    randomize(m, rng, 2.0);
    const auto pairs = random_pairs(rng, 8, 1, 6);
    EXPECT_LT(worst_fd_error(m, pairs, trial % 2 == 1), 1e-4) << "trial " << trial;
  }
}

TEST(ChoiceModels, CategoricalMlpGradientMatchesFiniteDifferences) {
  Rng rng = split_stream(3, "fd");
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> mask(kChoices, 1.0);
    if (trial % 3 == 0) mask[3] = 0.0;
    MlpChoiceModel m(small_spec(kChoices), step_features, mask, rng);
    randomize(m, rng, 0.8);
    auto pairs = random_pairs(rng, 6, 1, 5);
    for (auto& p : pairs) {
      for (auto* t : {&p.tau1, &p.tau2}) {
        for (auto& s : t->steps) {
          if (mask[static_cast<std::size_t>(s.choice)] == 0.0) s.choice = 0;
        }
      }
    }
    EXPECT_LT(worst_fd_error(m, pairs, trial % 2 == 1), 1e-4) << "trial " << trial;
  }
}

TEST(ChoiceModels, GaussianGradientMatchesFiniteDifferences) {
  Rng rng = split_stream(4, "fd");
  for (int trial = 0; trial < 10; ++trial) {
    GaussianGoalModel m(small_spec(4), step_features, {-1.0, -1.0}, {1.0, 1.0}, rng);
    randomize(m, rng, 0.5);
    const auto pairs = random_pairs(rng, 6, 1, 5);
    EXPECT_LT(worst_fd_error(m, pairs, trial % 2 == 1), 1e-4) << "trial " << trial;
  }
}

TEST(ChoiceModels, MaskedChoicesHaveNoMass) {
  Rng rng = split_stream(5, "mask");
  MlpChoiceModel m(small_spec(kChoices), step_features, {1.0, 0.0, 1.0, 0.0}, rng);
  randomize(m, rng, 1.0);
  const auto p = m.probabilities(tab_step(2, 0), {0.0, 0.0});
  EXPECT_EQ(p[1], 0.0);
  EXPECT_EQ(p[3], 0.0);
  EXPECT_NEAR(p[0] + p[2], 1.0, 1e-12);
  for (int i = 0; i < 200; ++i) {
    const int c = m.sample(tab_step(2, 0), {0.0, 0.0}, rng);
    EXPECT_TRUE(c == 0 || c == 2);
  }
  const int g = m.greedy(tab_step(2, 0), {0.0, 0.0});
  EXPECT_TRUE(g == 0 || g == 2);
}

TEST(ChoiceModels, GaussianSamplesStayInTheBox) {
  Rng rng = split_stream(6, "box");
  GaussianGoalModel m(small_spec(4), step_features, {-0.5, -0.5}, {10.5, 9.5}, rng);
  randomize(m, rng, 2.0);
  for (int i = 0; i < 500; ++i) {
    const auto g = m.sample(tab_step(i % kStates, 0), {1.0, 1.0}, rng);
    EXPECT_GE(g.x, -0.5);
    EXPECT_LE(g.x, 10.5);
    EXPECT_GE(g.y, -0.5);
    EXPECT_LE(g.y, 9.5);
  }
}

TEST(LossAlgebra, ZeroLambdaReducesToUniformReferenceDpo) {
  Rng rng = split_stream(7, "reduce");
  const StepOffset uniform = [](const HighStep&, const env::Goal&) { return -std::log(double(kChoices)); };
  for (int trial = 0; trial < 20; ++trial) {
    TabularChoiceModel m(kStates, kChoices);
    randomize(m, rng, 2.0);
    // equal lengths: the constant reference term then cancels inside z
    const int len = 1 + trial % 6;
    const auto pairs = random_pairs(rng, 10, len, len);
    const double alpha = 0.1 + uniform01(rng);
    std::vector<double> g_full(m.params().size()), g_prac(m.params().size()), g_flat(m.params().size());
    const double full = dipper_loss_full(m, kGap, pairs, alpha, 0.0, g_full).loss;
    const double prac = dipper_loss_practical(m, kValueK, pairs, alpha, 0.0, g_prac).loss;
    const double flat = dpo_flat_loss(m, uniform, pairs, alpha, g_flat).loss;
    EXPECT_NEAR(full, prac, 1e-12);
    EXPECT_NEAR(full, flat, 1e-12);
    for (std::size_t i = 0; i < g_full.size(); ++i) {
      EXPECT_NEAR(g_full[i], g_prac[i], 1e-12);
      EXPECT_NEAR(g_full[i], g_flat[i], 1e-12);
    }
  }
}

TEST(LossAlgebra, UniformReferenceShiftsLogitWithUnequalLengths) {
  Rng rng = split_stream(8, "reduce");
  TabularChoiceModel m(kStates, kChoices);
  randomize(m, rng, 1.0);
  auto pairs = random_pairs(rng, 1, 2, 2);
  pairs[0].tau2 = random_traj(rng, 5);
  const double alpha = 0.6;
  const StepOffset uniform = [](const HighStep&, const env::Goal&) { return -std::log(double(kChoices)); };
  const auto flat = dpo_flat_loss(m, uniform, pairs, alpha);
  const auto full = dipper_loss_full(m, kGap, pairs, alpha, 0.0);
  EXPECT_NEAR(flat.logits[0] - full.logits[0], alpha * std::log(double(kChoices)) * (2 - 5), 1e-12);
}

TEST(LossAlgebra, SwappingPairsIsExactlyAntisymmetric) {
  Rng rng = split_stream(9, "swap");
  for (int trial = 0; trial < 20; ++trial) {
    TabularChoiceModel m(kStates, kChoices);
    randomize(m, rng, 2.0);
    const auto pairs = random_pairs(rng, 7, 1, 6);
    auto swapped = pairs;
    for (auto& p : swapped) {
      std::swap(p.tau1, p.tau2);
      p.y = pref::Label{(*p.y)[1], (*p.y)[0]};
    }
    for (const auto& [name, fn] : all_losses(trial % 2 == 0)) {
      const auto a = fn(m, pairs, {}), b = fn(m, swapped, {});
      EXPECT_EQ(a.loss, b.loss) << name;
      for (std::size_t i = 0; i < a.logits.size(); ++i) EXPECT_EQ(a.logits[i], -b.logits[i]) << name;
    }
  }
}

TEST(LossAlgebra, TieOnIdenticalTrajectoriesIsLn2) {
  Rng rng = split_stream(10, "tie");
  TabularChoiceModel m(kStates, kChoices);
  randomize(m, rng, 2.0);
  PreferencePair p;
  p.tau1 = random_traj(rng, 4);
  p.tau2 = p.tau1;
  p.y = pref::Label{0.5, 0.5};
  const std::vector<PreferencePair> pairs{p};
  for (const auto& [name, fn] : all_losses(false)) {
    std::vector<double> grad(m.params().size(), 0.0);
    EXPECT_NEAR(fn(m, pairs, grad).loss, std::numbers::ln2, 1e-15) << name;
    for (double g : grad) EXPECT_NEAR(g, 0.0, 1e-15);
  }
}

TEST(LossAlgebra, HandComputedDpoValues) {
  // one state, two choices, pi = (3/4, 1/4): z = log 3 with alpha = 1
  TabularChoiceModel m(1, 2);
  m.params()[0] = std::log(3.0);
  PreferencePair p;
  p.tau1.steps = {tab_step(0, 0)};
  p.tau2.steps = {tab_step(0, 1)};
  p.y = pref::Label{1.0, 0.0};
  const StepOffset zero_ref = [](const HighStep&, const env::Goal&) { return 0.0; };
  std::vector<PreferencePair> pairs{p};
  EXPECT_NEAR(dpo_flat_loss(m, zero_ref, pairs, 1.0).loss, -std::log(0.75), 1e-14);
  pairs[0].y = pref::Label{0.0, 1.0};
  EXPECT_NEAR(dpo_flat_loss(m, zero_ref, pairs, 1.0).loss, -std::log(0.25), 1e-14);
  m.params()[0] = 0.0;
  EXPECT_NEAR(dpo_flat_loss(m, zero_ref, pairs, 1.0).loss, std::numbers::ln2, 1e-15);
}

TEST(LossAlgebra, PracticalOffsetOnlyReweightsPairs) {
  // The V^k term is a constant per step: the gradient is the lambda = 0 gradient
  // rescaled pair by pair, never a new direction for single-pair batches.
  Rng rng = split_stream(11, "vk");
  TabularChoiceModel m(kStates, kChoices);
  randomize(m, rng, 1.0);
  auto pairs = random_pairs(rng, 1, 3, 3);
  pairs[0].y = pref::Label{1.0, 0.0};
  std::vector<double> g0(m.params().size(), 0.0), g1(m.params().size(), 0.0);
  dipper_loss_practical(m, kValueK, pairs, 0.5, 0.0, g0);
  dipper_loss_practical(m, kValueK, pairs, 0.5, 2.0, g1);
  double ratio = 0.0;
  for (std::size_t i = 0; i < g0.size(); ++i) {
    if (std::abs(g0[i]) > 1e-9) {
      ratio = g1[i] / g0[i];
      break;
    }
  }
  ASSERT_GT(ratio, 0.0);
  for (std::size_t i = 0; i < g0.size(); ++i) EXPECT_NEAR(g1[i], ratio * g0[i], 1e-12);
}

TEST(LossAlgebra, FullObjectiveNeedsExactValues) {
  TabularChoiceModel m(1, 2);
  std::vector<PreferencePair> pairs;
  EXPECT_THROW(dipper_loss_full(m, StepOffset{}, pairs, 1.0, 1.0), UnsupportedConfiguration);
}

TEST(LossAlgebra, UnlabeledPairsAreRejected) {
  Rng rng = split_stream(12, "unlabeled");
  TabularChoiceModel m(kStates, kChoices);
  auto pairs = random_pairs(rng, 2, 1, 2);
  pairs[1].y.reset();
  EXPECT_THROW(dipper_loss_practical(m, kValueK, pairs, 1.0, 0.1), ArgumentError);
}

TEST(StepwiseGradient, AgreesWithAutodiffOnSingleSteps) {
  // With one decision per trajectory the per-step sigmoid equals the
  // trajectory-level sigmoid.
  Rng rng = split_stream(13, "stepwise");
  for (int trial = 0; trial < 10; ++trial) {
    TabularChoiceModel m(kStates, kChoices);
    randomize(m, rng, 1.5);
    auto pairs = random_pairs(rng, 8, 1, 1);
    std::vector<double> autodiff(m.params().size(), 0.0);
    dipper_loss_full(m, kGap, pairs, 0.5, 0.7, autodiff);
    const auto stepwise = analytic_gradient_stepwise(m, kGap, pairs, 0.5, 0.7);
    EXPECT_LT(dipper::testing::max_relative_error(stepwise, autodiff, 1e-9), 1e-10);
  }
}

TEST(StepwiseGradient, DiffersFromAutodiffOnLongTrajectories) {
  Rng rng = split_stream(14, "stepwise");
  TabularChoiceModel m(kStates, kChoices);
  randomize(m, rng, 1.5);
  auto pairs = random_pairs(rng, 8, 4, 4);
  for (auto& p : pairs) p.y = pref::Label{1.0, 0.0};
  std::vector<double> autodiff(m.params().size(), 0.0);
  dipper_loss_full(m, kGap, pairs, 0.5, 0.7, autodiff);
  const auto stepwise = analytic_gradient_stepwise(m, kGap, pairs, 0.5, 0.7);
  const double err = dipper::testing::max_relative_error(stepwise, autodiff, 1e-9);
  RecordProperty("stepwise_vs_autodiff_max_rel_error", std::to_string(err));
  EXPECT_GT(err, 1e-3);
  for (double g : stepwise) EXPECT_TRUE(std::isfinite(g));
}

TEST(TabularInversion, SmallDatasetMovesTowardClosedForm) {
  Rng rng = split_stream(15, "invert");
  const auto mdp = oracle::random_goal_mdp(2, 3, rng);
  const double alpha = 1.0, lambda = 0.5;
  std::vector<PreferencePair> pairs;
  for (int i = 0; i < 3000; ++i) {
    const int s = uniform_int(rng, 0, 1);
    const int g1 = uniform_int(rng, 0, 2);
    const int g2 = (g1 + uniform_int(rng, 1, 2)) % 3;
    PreferencePair p;
    p.tau1.steps = {tab_step(s, g1)};
    p.tau2.steps = {tab_step(s, g2)};
    const double p1 = pref::bt_probability(mdp.reward[s][g1], mdp.reward[s][g2]);
    p.y = uniform01(rng) < p1 ? pref::Label{1.0, 0.0} : pref::Label{0.0, 1.0};
    pairs.push_back(std::move(p));
  }
  const StepOffset gap = [&](const HighStep& h, const env::Goal&) { return mdp.gap(h.state_index, h.choice); };
  TabularChoiceModel m(2, 3);
  auto opt = nn::AdamState::create(m.params().size(), {0.05});
  for (int it = 0; it < 1500; ++it) {
    std::vector<double> grad(m.params().size(), 0.0);
    dipper_loss_full(m, gap, pairs, alpha, lambda, grad);
    nn::adam_step(opt, m.params(), grad);
  }
  const auto target = oracle::closed_form_pi_u(mdp, alpha, lambda);
  for (int s = 0; s < 2; ++s) EXPECT_LT(oracle::total_variation(m.probabilities(s), target.probs[s]), 0.1);
}

TEST(Variants, NamesRoundTrip) {
  for (auto v : {Variant::Dipper, Variant::DipperNoV, Variant::DpoFlat, Variant::Hier, Variant::Flat}) {
    EXPECT_EQ(variant_from_string(to_string(v)), v);
  }
  EXPECT_THROW(variant_from_string("dipper"), ConfigError);
}

TEST(DipperConfig, RejectsBadValues) {
  DipperConfig c;
  EXPECT_NO_THROW(c.validate());
  c.kl_alpha = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.variant = Variant::DipperNoV;
  EXPECT_THROW(c.validate(), ConfigError);
  c.lambda = 0.0;
  EXPECT_NO_THROW(c.validate());
  c = {};
  c.lambda = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.randomize_layout = true;
  EXPECT_THROW(c.validate(), UnsupportedConfiguration);
}

TEST(HierReward, CountsStepsAwayFromGoal) {
  const std::vector<env::Point> pts{{0.0, 0.0}, {1.0, 0.0}, {2.0, 0.0}, {2.2, 0.0}};
  EXPECT_DOUBLE_EQ(hier_interval_reward(pts, {2.0, 0.0}, 0.5), -2.0);
  EXPECT_DOUBLE_EQ(hier_interval_reward({}, {2.0, 0.0}, 0.5), 0.0);
}

namespace {

DipperConfig tiny_config(Variant v) {
  DipperConfig c;
  c.variant = v;
  if (v == Variant::DipperNoV) c.lambda = 0.0;
  c.total_steps = 1500;
  c.eval_every = 500;
  c.eval_episodes = 3;
  c.relabel_every = 300;
  c.reward_batch_size = 10;
  c.min_labeled_pairs = 5;
  c.lower_warmup = 200;
  c.lower_update_every = 4;
  c.value_steps = 2;
  c.sac.batch_size = 32;
  c.sac.hidden_width = 16;
  c.sac.n_hidden = 2;
  c.features.include_maze = false;
  c.replay_capacity = 5000;
  return c;
}

}  // namespace

TEST(TrainLoop, EveryVariantRunsAndIsDeterministic) {
  for (auto v : {Variant::Dipper, Variant::DipperNoV, Variant::DpoFlat, Variant::Hier, Variant::Flat}) {
    const auto c = tiny_config(v);
    const auto a = train_dipper(c, 3);
    const auto b = train_dipper(c, 3);
    ASSERT_EQ(a.metrics.size(), 3u) << to_string(v);
    ASSERT_EQ(a.metrics.size(), b.metrics.size());
    for (std::size_t i = 0; i < a.metrics.size(); ++i) {
      EXPECT_EQ(a.metrics[i].step, 500 * static_cast<long>(i + 1));
      EXPECT_EQ(a.metrics[i].success_rate, b.metrics[i].success_rate) << to_string(v);
      EXPECT_EQ(a.metrics[i].loss_higher, b.metrics[i].loss_higher) << to_string(v);
      EXPECT_EQ(a.metrics[i].loss_lower_critic, b.metrics[i].loss_lower_critic) << to_string(v);
      EXPECT_EQ(a.metrics[i].mean_vk, b.metrics[i].mean_vk) << to_string(v);
      EXPECT_EQ(a.metrics[i].pairs_labeled, b.metrics[i].pairs_labeled) << to_string(v);
      EXPECT_GE(a.metrics[i].success_rate, 0.0);
      EXPECT_LE(a.metrics[i].success_rate, 1.0);
    }
  }
}

TEST(TrainLoop, PreferenceVariantsLabelPairsThroughTheStore) {
  pref::PreferenceStore store;
  RunHooks hooks;
  hooks.store = &store;
  std::vector<MetricsRow> seen;
  hooks.on_metrics = [&](const MetricsRow& r) { seen.push_back(r); };
  const auto c = tiny_config(Variant::Dipper);
  train_dipper(c, 1, hooks);
  EXPECT_EQ(seen.size(), 3u);
  EXPECT_EQ(store.labeled_count(), store.size());
  EXPECT_EQ(store.labeled_count(), 50u);  // 5 relabel rounds of 10 pairs
  EXPECT_EQ(store.training_step(), 1500);
  EXPECT_EQ(seen.back().pairs_labeled, 50u);
  for (const auto& p : store.labeled_pairs()) EXPECT_EQ(p.source, pref::LabelSource::Oracle);
}

TEST(TrainLoop, HumanModeFallsBackToOracleAfterTimeout) {
  pref::PreferenceStore store;
  RunHooks hooks;
  hooks.store = &store;
  auto c = tiny_config(Variant::DipperNoV);
  c.oracle = OracleMode::Human;
  c.human_timeout_ms = 1;
  c.total_steps = 600;
  train_dipper(c, 2, hooks);
  EXPECT_EQ(store.pending_count(), 0u);
  EXPECT_EQ(store.labeled_count(), 20u);
}

TEST(TrainLoop, WritesCheckpointsWithSidecars) {
  dipper::testing::TempDir dir("ckpt");
  RunHooks hooks;
  hooks.checkpoint_dir = (dir.path() / "ck").string();
  auto c = tiny_config(Variant::Dipper);
  c.total_steps = 500;
  train_dipper(c, 4, hooks);
  for (const char* name : {"lower_actor", "lower_critic0", "lower_critic1", "lower_value", "higher_policy"}) {
    bool found = false;
    for (const auto& e : std::filesystem::directory_iterator(dir.path() / "ck")) {
      if (e.path().filename().string().starts_with(name)) found = true;
    }
    EXPECT_TRUE(found) << name;
  }
}
