#include "dipper/lower_level.hpp"

namespace dipper::lower {

double greedy_success_all_starts(const LowerAgent& agent, const env::MazeEnv& env,
                                 const std::shared_ptr<const env::MazeLayout>& layout, const env::Goal& goal,
                                 int horizon, Rng& rng) {
  int trials = 0, successes = 0;
  for (int cell : layout->free_cells()) {
    const env::Point start = env::cell_center(*layout, cell);
    if (env.achieved(start, goal)) continue;
    env::EnvState s{start, layout};
    ++trials;
    for (int t = 0; t < horizon; ++t) {
      s = env.step(s, agent.act(s, goal, false, rng));
      if (env.achieved(s.position, goal)) {
        ++successes;
        break;
      }
    }
  }
  return trials == 0 ? 1.0 : static_cast<double>(successes) / trials;
}

FixedGoalResult train_fixed_goal(LowerAgent& agent, const env::MazeEnv& env,
                                 const std::shared_ptr<const env::MazeLayout>& layout, const env::Goal& goal,
                                 const FixedGoalConfig& config, Rng& rng) {
  FixedGoalResult result;
  result.replay = LowerReplay(config.replay_capacity);
  const auto cells = layout->free_cells();
  auto fresh_start = [&] {
    for (;;) {
      const env::Point p =
          env::cell_center(*layout, cells[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(cells.size()) - 1))]);
      if (!env.achieved(p, goal)) return env::EnvState{p, layout};
    }
  };
  env::EnvState s = fresh_start();
  int t = 0;
  for (int step = 1; step <= config.env_steps; ++step) {
    const auto a = agent.act(s, goal, true, rng);
    env::EnvState next = env.step(s, a);
    const double r = env.lower_reward(next, goal);
    const bool reached = env.achieved(next.position, goal);
    result.replay.add({s, goal, a, r, next, reached});
    s = next;
    if (reached || ++t >= config.horizon) {
      s = fresh_start();
      t = 0;
    }
    if (step >= config.warmup_steps && step % config.update_every == 0) {
      const auto batch = result.replay.sample(static_cast<std::size_t>(agent.config().batch_size), rng);
      agent.sac_update(batch, rng);
    }
    if (step % config.eval_every == 0 || step == config.env_steps) {
      const double sr = greedy_success_all_starts(agent, env, layout, goal, config.horizon, rng);
      result.curve.emplace_back(step, sr);
      if (sr >= 0.95 && result.first_step_at_95 < 0) result.first_step_at_95 = step;
    }
  }
  result.final_success = result.curve.empty() ? 0.0 : result.curve.back().second;
  return result;
}

}  // namespace dipper::lower
