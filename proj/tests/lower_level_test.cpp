#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "dipper/lower_level.hpp"
#include "dipper/tabular_oracle.hpp"

using namespace dipper;
using namespace dipper::lower;

namespace {

SacConfig small_config() {
  SacConfig c;
  c.batch_size = 64;
  c.hidden_width = 32;
  c.n_hidden = 2;
  return c;
}

SacBatch constant_batch(int n, int obs_dim, int action_dim, double reward, double discount, Rng& rng) {
  SacBatch b;
  b.obs = nn::Matrix::Constant(n, obs_dim, 0.5);
  b.next_obs = b.obs;
  for (int i = 0; i < n; ++i) {
    b.actions.push_back(uniform_int(rng, 0, action_dim - 1));
    b.rewards.push_back(reward);
    b.discounts.push_back(discount);
  }
  return b;
}

}  // namespace

TEST(ReplayBuffer, RingOverwriteAndCapacity) {
  ReplayBuffer<int> buf(5);
  for (int i = 0; i < 12; ++i) buf.add(i);
  EXPECT_EQ(buf.size(), 5u);
  std::multiset<int> items;
  for (std::size_t i = 0; i < buf.size(); ++i) items.insert(buf[i]);
  EXPECT_EQ(items, (std::multiset<int>{7, 8, 9, 10, 11}));
  EXPECT_THROW(ReplayBuffer<int>(0), ArgumentError);
}

TEST(ReplayBuffer, SamplingFuzz) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto cap = static_cast<std::size_t>(uniform_int(rng, 1, 50));
    ReplayBuffer<int> buf(cap);
    const int adds = uniform_int(rng, 1, 120);
    for (int i = 0; i < adds; ++i) buf.add(i);
    ASSERT_EQ(buf.size(), std::min<std::size_t>(cap, static_cast<std::size_t>(adds)));
    const auto n = static_cast<std::size_t>(uniform_int(rng, 1, 60));
    const auto idx = buf.sample_indices(n, rng);
    EXPECT_EQ(idx.size(), std::min(n, buf.size()));
    const std::set<std::size_t> distinct(idx.begin(), idx.end());
    EXPECT_EQ(distinct.size(), idx.size());
    for (auto i : idx) EXPECT_LT(i, buf.size());
  }
}

TEST(ReplayBuffer, SamplingIsRoughlyUniform) {
  Rng rng(2);
  ReplayBuffer<int> buf(10);
  for (int i = 0; i < 10; ++i) buf.add(i);
  std::vector<int> counts(10, 0);
  const int draws = 20000;
  for (int d = 0; d < draws; ++d) ++counts[static_cast<std::size_t>(buf.sample(3, rng)[0])];
  double chi2 = 0.0;
  const double expected = draws / 10.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 21.67);  // chi-square, 9 dof, 1%
}

TEST(Sac, CategoricalSamplingMatchesProbabilities) {
  Rng rng(3);
  SacConfig cfg = small_config();
  cfg.random_eps = 0.0;
  SacLearner learner(4, ActionSpace::Categorical, 5, cfg, rng);
  // sharpen the policy away from uniform
  for (double& w : learner.actor().values) w *= 20.0;
  const std::vector<double> obs{0.3, -0.2, 0.9, 0.1};
  const auto probs = learner.probabilities(obs);
  std::vector<int> counts(5, 0);
  const int draws = 20000;
  for (int d = 0; d < draws; ++d) ++counts[static_cast<std::size_t>(learner.act_categorical(obs, {}, true, rng))];
  double chi2 = 0.0;
  for (int a = 0; a < 5; ++a) {
    const double e = probs[static_cast<std::size_t>(a)] * draws;
    chi2 += (counts[static_cast<std::size_t>(a)] - e) * (counts[static_cast<std::size_t>(a)] - e) / e;
  }
  EXPECT_LT(chi2, 13.28);  // chi-square, 4 dof, 1%
}

TEST(Sac, MaskedActionsNeverChosen) {
  Rng rng(4);
  SacLearner learner(3, ActionSpace::Categorical, 4, small_config(), rng);
  const std::vector<double> obs{1.0, 0.0, -1.0};
  const std::vector<double> mask{0.0, 1.0, 0.0, 1.0};
  for (int d = 0; d < 2000; ++d) {
    const int a = learner.act_categorical(obs, mask, true, rng);
    EXPECT_TRUE(a == 1 || a == 3);
  }
  const auto p = learner.probabilities(obs, mask);
  EXPECT_EQ(p[0], 0.0);
  EXPECT_EQ(p[2], 0.0);
  EXPECT_NEAR(p[1] + p[3], 1.0, 1e-12);
}

TEST(Sac, SoftTargetsUseMinimumOfTwinTargets) {
  Rng rng(5);
  SacLearner learner(3, ActionSpace::Categorical, 4, small_config(), rng);
  SacBatch b = constant_batch(8, 3, 4, -1.0, 0.95, rng);
  for (int i = 0; i < 8; ++i) b.next_obs.row(i) << 0.1 * i, -0.2, 0.05 * i;
  const auto y = learner.soft_targets(b, rng);
  const nn::Matrix q1 = nn::forward_batch(learner.critic_spec(), learner.target(0), b.next_obs);
  const nn::Matrix q2 = nn::forward_batch(learner.critic_spec(), learner.target(1), b.next_obs);
  const double alpha = learner.config().sac_alpha;
  for (int i = 0; i < 8; ++i) {
    const std::vector<double> x{b.next_obs(i, 0), b.next_obs(i, 1), b.next_obs(i, 2)};
    const auto p = learner.probabilities(x);
    double v = 0.0;
    for (int a = 0; a < 4; ++a) v += p[a] * (std::min(q1(i, a), q2(i, a)) - alpha * std::log(p[a]));
    EXPECT_NEAR(y[static_cast<std::size_t>(i)], -1.0 + 0.95 * v, 1e-12);
  }
}

TEST(Sac, TerminalTransitionsIgnoreBootstrap) {
  Rng rng(6);
  SacLearner learner(3, ActionSpace::Categorical, 4, small_config(), rng);
  const SacBatch b = constant_batch(5, 3, 4, -0.5, 0.0, rng);
  for (double y : learner.soft_targets(b, rng)) EXPECT_EQ(y, -0.5);
}

TEST(Sac, EmptyBatchThrows) {
  Rng rng(7);
  SacLearner learner(3, ActionSpace::Categorical, 4, small_config(), rng);
  EXPECT_THROW(learner.update(SacBatch{}, rng), ArgumentError);
}

TEST(Sac, CriticLossDecreasesOnFixedBatch) {
  Rng rng(8);
  SacLearner learner(3, ActionSpace::Categorical, 4, small_config(), rng);
  SacBatch b = constant_batch(64, 3, 4, -1.0, 0.0, rng);
  for (int i = 0; i < 64; ++i) b.obs.row(i) << uniform01(rng), uniform01(rng), uniform01(rng);
  const double first = learner.update(b, rng).critic_loss;
  double last = first;
  for (int step = 0; step < 50; ++step) last = learner.update(b, rng).critic_loss;
  EXPECT_LT(last, 0.1 * first);
}

TEST(Sac, ZeroRewardSelfLoopConvergesToEntropyValue) {
  Rng rng(9);
  SacConfig cfg = small_config();
  cfg.critic_lr = 3e-3;
  SacLearner learner(2, ActionSpace::Categorical, 5, cfg, rng);
  const SacBatch b = constant_batch(64, 2, 5, 0.0, cfg.gamma, rng);
  for (int step = 0; step < 3000; ++step) learner.update(b, rng);
  // soft value of the uniform policy: alpha ln|A| / (1 - gamma)
  oracle::FiniteMdp m = oracle::FiniteMdp::zeros(1, 5, cfg.gamma);
  for (int a = 0; a < 5; ++a) m.p(0, a, 0) = 1.0;
  const auto v = oracle::soft_value_iteration(m, cfg.sac_alpha, 1e-12);
  const double q_star = cfg.gamma * v[0];
  const nn::Matrix q = learner.q_values(0, b.obs.topRows(1));
  for (int a = 0; a < 5; ++a) EXPECT_NEAR(q(0, a), q_star, 0.05);
  for (double p : learner.probabilities(std::vector<double>{0.5, 0.5})) EXPECT_NEAR(p, 0.2, 0.02);
}

TEST(Sac, GaussianPolicyFindsBanditOptimum) {
  Rng rng(10);
  SacConfig cfg = small_config();
  cfg.sac_alpha = 0.01;
  SacLearner learner(1, ActionSpace::Gaussian, 1, cfg, rng);
  for (int step = 0; step < 1500; ++step) {
    SacBatch b;
    b.obs = nn::Matrix::Ones(64, 1);
    b.next_obs = b.obs;
    b.continuous_actions.resize(64, 1);
    for (int i = 0; i < 64; ++i) {
      const double a = 2.0 * uniform01(rng) - 1.0;
      b.continuous_actions(i, 0) = a;
      b.rewards.push_back(-(a - 0.5) * (a - 0.5));
      b.discounts.push_back(0.0);
    }
    learner.update(b, rng);
  }
  const auto a = learner.act_gaussian(std::vector<double>{1.0}, false, rng);
  EXPECT_NEAR(a[0], 0.5, 0.1);
}

TEST(LowerAgent, ZeroValueStepsLeaveHeadUnchanged) {
  Rng rng(11);
  auto layout = std::make_shared<const env::MazeLayout>(env::open_room(3, 3));
  LowerAgent agent(*layout, env::EnvKind::Discrete, small_config(), {}, rng);
  LowerReplay replay(10);
  const auto before = agent.value_head().params.values;
  agent.train_value_k(replay, 0, rng);
  EXPECT_EQ(agent.value_head().params.values, before);
  EXPECT_EQ(agent.value_estimate(env::EnvState{{0, 0}, layout}, {2, 2}), 0.0);
  EXPECT_THROW(agent.train_value_k(replay, 1, rng), ArgumentError);
}

TEST(LowerAgent, ValueHeadMatchesExactEvaluationOfFixedPolicy) {
  // Transitions from the optimal lower policy on a 4 x 4 room; the value head
  // must reproduce exact policy evaluation.
  Rng rng(12);
  auto layout = std::make_shared<const env::MazeLayout>(env::open_room(4, 4));
  SacConfig cfg = small_config();
  cfg.value_lr = 3e-3;
  LowerAgent agent(*layout, env::EnvKind::Discrete, cfg, {}, rng);
  env::MazeEnv menv(env::EnvConfig{});
  const env::Goal goal{3, 3};
  const int goal_cell = layout->cell_index(3, 3);
  const auto dist = env::bfs_distances(*layout, 3, 3);
  LowerReplay replay(1000);
  for (int cell : layout->free_cells()) {
    if (cell == goal_cell) continue;
    const env::EnvState s{env::cell_center(*layout, cell), layout};
    const env::Move m = s.position.x < 3 ? env::Move::Right : env::Move::Down;
    const env::EnvState next = menv.step(s, m);
    replay.add({s, goal, m, menv.lower_reward(next, goal), next, menv.achieved(next.position, goal)});
  }
  for (int round = 0; round < 3000; ++round) agent.train_value_k(replay, 1, rng);
  const auto mdp = oracle::lower_goal_mdp(*layout, goal_cell, cfg.gamma);
  const auto exact = oracle::value_iteration(mdp, 1e-12);
  const auto cells = layout->free_cells();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i] == goal_cell) continue;
    const double v = agent.value_estimate(env::EnvState{env::cell_center(*layout, cells[i]), layout}, goal);
    EXPECT_NEAR(v, exact[i], 0.1) << "cell " << cells[i] << " distance " << dist[static_cast<std::size_t>(cells[i])];
  }
}

TEST(LowerAgent, LearnsToReachGoalInSmallRoom) {
  Rng rng(13);
  auto layout = std::make_shared<const env::MazeLayout>(env::open_room(3, 3));
  LowerAgent agent(*layout, env::EnvKind::Discrete, small_config(), {}, rng);
  env::MazeEnv menv(env::EnvConfig{});
  FixedGoalConfig fc;
  fc.env_steps = 3000;
  fc.horizon = 10;
  fc.eval_every = 1000;
  const auto result = train_fixed_goal(agent, menv, layout, {2, 0}, fc, rng);
  EXPECT_GE(result.final_success, 0.95);
  EXPECT_EQ(result.curve.size(), 3u);
}
