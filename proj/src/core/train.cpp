#include <cmath>
#include <deque>
#include <filesystem>
#include <memory>
#include <optional>

#include "dipper/dipper_core.hpp"
#include "dipper/errors.hpp"

namespace dipper::core {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Dipper: return "DIPPER";
    case Variant::DipperNoV: return "DIPPER_NO_V";
    case Variant::DpoFlat: return "DPO_FLAT";
    case Variant::Hier: return "HIER";
    case Variant::Flat: return "FLAT";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  for (auto v : {Variant::Dipper, Variant::DipperNoV, Variant::DpoFlat, Variant::Hier, Variant::Flat}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown variant '" + s + "' (expected DIPPER, DIPPER_NO_V, DPO_FLAT, HIER or FLAT)");
}

void DipperConfig::validate() const {
  if (!(kl_alpha > 0.0)) throw ConfigError("kl_alpha must be positive");
  if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
  if (variant == Variant::DipperNoV && lambda != 0.0) throw ConfigError("DIPPER_NO_V requires lambda = 0");
  if (value_steps < 0) throw ConfigError("value_steps must be non-negative");
  if (total_steps <= 0 || eval_every <= 0 || relabel_every <= 0) throw ConfigError("step counts must be positive");
  if (eval_episodes <= 0) throw ConfigError("eval_episodes must be positive");
  if (reward_batch_size <= 0 || recent_episodes < 2) throw ConfigError("pair sampling needs a batch and >= 2 episodes");
  if (higher_update_every <= 0 || lower_update_every <= 0) throw ConfigError("update cadences must be positive");
  if (higher_batch_pairs <= 0) throw ConfigError("higher_batch_pairs must be positive");
  if (!(higher_lr > 0.0)) throw ConfigError("higher_lr must be positive");
  if (higher_random_eps < 0.0 || higher_random_eps > 1.0) throw ConfigError("higher_random_eps must lie in [0, 1]");
  if (env.subgoal_interval <= 0 || env.horizon <= 0) throw ConfigError("subgoal interval and horizon must be positive");
  if (!(env.epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (replay_capacity == 0) throw ConfigError("replay_capacity must be positive");
  if (sac.batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (randomize_layout) throw UnsupportedConfiguration("randomize_layout is not supported; layouts are fixed per seed");
}

double hier_interval_reward(std::span<const env::Point> achieved, const env::Goal& end_goal, double epsilon) {
  double r = 0.0;
  for (const auto& p : achieved) r -= env::distance(p, end_goal) > epsilon ? 1.0 : 0.0;
  return r;
}

namespace {

constexpr double kFlatMoveLogRef = -1.6094379124341003;  // log(1/5)
constexpr double kUnitBoxLogRef = -1.3862943611198906;   // log(1/4), uniform on (-1,1)^2

struct HierTransition {
  std::vector<double> obs;
  std::vector<double> next_obs;
  int action = 0;
  std::array<double, 2> unit{};
  double reward = 0.0;
  double discount = 0.0;
};

struct EpisodeOutcome {
  pref::HighTrajectory traj;
  bool success = false;
};

class Trainer {
 public:
  Trainer(const DipperConfig& cfg, std::uint64_t seed, const RunHooks& hooks)
      : cfg_(cfg),
        seed_(seed),
        hooks_(hooks),
        env_(cfg.env),
        task_rng_(split_stream(seed, "task")),
        act_rng_(split_stream(seed, "act")),
        update_rng_(split_stream(seed, "update")),
        pair_rng_(split_stream(seed, "pairs")),
        lower_replay_(cfg.replay_capacity),
        hier_replay_(cfg.replay_capacity) {
    cfg_.validate();
    layout_ = std::make_shared<const env::MazeLayout>(env::generate_maze(seed, cfg.env.width, cfg.env.height));
    discrete_ = cfg.env.kind == env::EnvKind::Discrete;
    if (hooks.store) {
      store_ = hooks.store;
    } else {
      own_store_ = std::make_unique<pref::PreferenceStore>();
      store_ = own_store_.get();
    }
    store_->register_layout(*layout_);
    Rng init_rng = split_stream(seed, "init");
    const env::Task t = env::sample_task(*layout_, task_rng_);
    fixed_goal_ = t.goal;
    build_agents(init_rng);
  }

  RunResult run() {
    while (step_ < cfg_.total_steps) {
      const EpisodeOutcome out = episode(task_rng_, true);
      if (uses_preferences()) {
        recent_.push_back(out.traj);
        if (static_cast<int>(recent_.size()) > cfg_.recent_episodes) recent_.pop_front();
      }
      ++episode_id_;
    }
    RunResult r;
    r.metrics = metrics_;
    r.final_success = metrics_.empty() ? 0.0 : metrics_.back().success_rate;
    r.value_clamps = lower_ ? lower_->value_clamp_count() : 0;
    save_checkpoints();
    return r;
  }

 private:
  bool uses_preferences() const {
    return cfg_.variant == Variant::Dipper || cfg_.variant == Variant::DipperNoV || cfg_.variant == Variant::DpoFlat;
  }
  bool hierarchical() const { return cfg_.variant != Variant::Flat && cfg_.variant != Variant::DpoFlat; }

  std::optional<env::Goal> goal_input(const env::Goal& g) const {
    if (cfg_.condition_on_end_goal || cfg_.randomize_goal) return g;
    return std::nullopt;
  }

  std::vector<double> higher_obs(const env::Point& p, const env::Goal& end_goal) const {
    return env::higher_features(env::EnvState{p, layout_}, goal_input(end_goal), cfg_.features);
  }

  void build_agents(Rng& rng) {
    const bool with_goal = goal_input({}).has_value();
    const int hdim = env::higher_feature_dim(*layout_, with_goal, cfg_.features);
    nn::MlpSpec hspec;
    hspec.input_dim = hdim;
    hspec.hidden_width = cfg_.sac.hidden_width;
    hspec.n_hidden = cfg_.sac.n_hidden;
    hspec.hidden_activation = cfg_.sac.activation;
    const Featurizer feat = [this](const HighStep& s, const env::Goal& g) { return higher_obs(s.position, g); };

    if (cfg_.variant != Variant::DpoFlat) {
      lower_ = std::make_unique<lower::LowerAgent>(*layout_, cfg_.env.kind, cfg_.sac, cfg_.features, rng);
    }
    switch (cfg_.variant) {
      case Variant::Dipper:
      case Variant::DipperNoV:
        if (discrete_) {
          hspec.output_dim = layout_->cell_count();
          cat_policy_ = std::make_unique<MlpChoiceModel>(hspec, feat, env::free_cell_mask(*layout_), rng);
        } else {
          gauss_policy_ = std::make_unique<GaussianGoalModel>(
              hspec, feat, env::Point{-0.5, -0.5}, env::Point{cfg_.env.width - 0.5, cfg_.env.height - 0.5}, rng);
        }
        break;
      case Variant::DpoFlat:
        if (discrete_) {
          hspec.output_dim = env::kMoveCount;
          cat_policy_ = std::make_unique<MlpChoiceModel>(hspec, feat, std::vector<double>{}, rng);
        } else {
          gauss_policy_ = std::make_unique<GaussianGoalModel>(hspec, feat, env::Point{-1.0, -1.0},
                                                              env::Point{1.0, 1.0}, rng);
        }
        break;
      case Variant::Hier:
        hier_ = std::make_unique<lower::SacLearner>(hdim,
                                                    discrete_ ? lower::ActionSpace::Categorical
                                                              : lower::ActionSpace::Gaussian,
                                                    discrete_ ? layout_->cell_count() : 2, cfg_.sac, rng);
        cell_mask_ = env::free_cell_mask(*layout_);
        break;
      case Variant::Flat:
        break;
    }
    if (ChoiceModel* m = choice_model()) higher_opt_ = nn::AdamState::create(m->params().size(), {cfg_.higher_lr});
  }

  ChoiceModel* choice_model() const {
    if (cat_policy_) return cat_policy_.get();
    if (gauss_policy_) return gauss_policy_.get();
    return nullptr;
  }

  // --- tasks ----------------------------------------------------------------

  env::Task next_task(Rng& rng) {
    if (cfg_.randomize_goal) return env::sample_task(*layout_, rng);
    const auto [gx, gy] = env::cell_of(fixed_goal_);
    const int room = layout_->room_of(gx, gy);
    return {env::sample_start_in_room(*layout_, 3 - room, rng), fixed_goal_};
  }

  int cell_index(const env::Point& p) const {
    const auto [x, y] = env::cell_of(p);
    return layout_->cell_index(std::clamp(x, 0, layout_->width - 1), std::clamp(y, 0, layout_->height - 1));
  }

  // --- decisions ------------------------------------------------------------

  HighStep choose_subgoal(const env::Point& p, const env::Goal& end_goal, bool explore, std::vector<double>* obs_out,
                          std::array<double, 2>* unit_out) {
    HighStep step;
    step.position = p;
    step.state_index = cell_index(p);
    if (hier_) {
      const auto obs = higher_obs(p, end_goal);
      if (obs_out) *obs_out = obs;
      if (discrete_) {
        step.choice = hier_->act_categorical(obs, cell_mask_, explore, act_rng_);
        step.subgoal = env::cell_center(*layout_, step.choice);
      } else {
        const auto u = hier_->act_gaussian(obs, explore, act_rng_);
        if (unit_out) *unit_out = {u[0], u[1]};
        step.subgoal = {-0.5 + 0.5 * (u[0] + 1.0) * cfg_.env.width, -0.5 + 0.5 * (u[1] + 1.0) * cfg_.env.height};
      }
      return step;
    }
    if (discrete_) {
      if (explore && uniform01(act_rng_) < cfg_.higher_random_eps) {
        const auto cells = layout_->free_cells();
        step.choice = cells[static_cast<std::size_t>(uniform_int(act_rng_, 0, static_cast<int>(cells.size()) - 1))];
      } else {
        step.choice = explore || cfg_.eval_sample_policy ? cat_policy_->sample(step, end_goal, act_rng_)
                                                        : cat_policy_->greedy(step, end_goal);
      }
      step.subgoal = env::cell_center(*layout_, step.choice);
    } else {
      if (explore && uniform01(act_rng_) < cfg_.higher_random_eps) {
        step.subgoal = {-0.5 + uniform01(act_rng_) * cfg_.env.width, -0.5 + uniform01(act_rng_) * cfg_.env.height};
      } else {
        step.subgoal = explore || cfg_.eval_sample_policy ? gauss_policy_->sample(step, end_goal, act_rng_)
                                                          : gauss_policy_->greedy(step, end_goal);
      }
    }
    return step;
  }

  // Flat preference policy: the recorded "subgoal" is the primitive action.
  std::pair<HighStep, env::PrimitiveAction> choose_flat_action(const env::Point& p, const env::Goal& end_goal,
                                                               bool explore) {
    HighStep step;
    step.position = p;
    step.state_index = cell_index(p);
    if (discrete_) {
      if (explore && uniform01(act_rng_) < cfg_.sac.random_eps) {
        step.choice = uniform_int(act_rng_, 0, env::kMoveCount - 1);
      } else {
        step.choice = explore || cfg_.eval_sample_policy ? cat_policy_->sample(step, end_goal, act_rng_)
                                                        : cat_policy_->greedy(step, end_goal);
      }
      step.subgoal = p;
      return {step, static_cast<env::Move>(step.choice)};
    }
    if (explore && uniform01(act_rng_) < cfg_.sac.random_eps) {
      step.subgoal = {2.0 * uniform01(act_rng_) - 1.0, 2.0 * uniform01(act_rng_) - 1.0};
    } else {
      step.subgoal = explore || cfg_.eval_sample_policy ? gauss_policy_->sample(step, end_goal, act_rng_)
                                                          : gauss_policy_->greedy(step, end_goal);
    }
    return {step, env::Offset{step.subgoal.x, step.subgoal.y}};
  }

  // --- episodes -------------------------------------------------------------

  EpisodeOutcome episode(Rng& task_rng, bool train) {
    const env::Task task = next_task(task_rng);
    EpisodeOutcome out;
    auto& traj = out.traj;
    traj.end_goal = task.goal;
    traj.episode_id = episode_id_;
    traj.layout_hash = layout_->hash();
    env::EnvState s{task.start, layout_};
    const int k = cfg_.env.subgoal_interval;
    env::Goal subgoal = task.goal;
    std::vector<double> hobs;
    std::array<double, 2> hunit{};
    std::vector<env::Point> interval;
    bool reached = env_.achieved(s.position, task.goal);

    auto push_hier = [&](const env::Point& now, bool done) {
      if (!train || !hier_ || hobs.empty()) return;
      HierTransition ht;
      ht.obs = hobs;
      ht.next_obs = higher_obs(now, task.goal);
      ht.action = traj.steps.back().choice;
      ht.unit = hunit;
      ht.reward = hier_interval_reward(interval, task.goal, cfg_.env.epsilon);
      ht.discount = done ? 0.0 : cfg_.sac.gamma;
      hier_replay_.add(std::move(ht));
    };

    for (int t = 0; t < cfg_.env.horizon && !reached; ++t) {
      if (train && step_ >= cfg_.total_steps) break;
      env::PrimitiveAction a;
      if (cfg_.variant == Variant::DpoFlat) {
        auto [hs, act] = choose_flat_action(s.position, task.goal, train);
        traj.steps.push_back(hs);
        a = act;
      } else if (cfg_.variant == Variant::Flat) {
        subgoal = task.goal;
        a = lower_->act(s, subgoal, train, act_rng_);
      } else {
        if (t % k == 0) {
          if (!traj.steps.empty()) {
            push_hier(s.position, false);
          }
          interval.clear();
          traj.steps.push_back(choose_subgoal(s.position, task.goal, train, &hobs, &hunit));
          subgoal = traj.steps.back().subgoal;
        }
        a = lower_->act(s, subgoal, train, act_rng_);
      }
      env::EnvState next = env_.step(s, a);
      if (train && lower_) {
        lower_replay_.add(
            {s, subgoal, a, env_.lower_reward(next, subgoal), next, env_.achieved(next.position, subgoal)});
      }
      traj.achieved.push_back(next.position);
      interval.push_back(next.position);
      s = next;
      reached = env_.achieved(s.position, task.goal);
      if (!cfg_.terminate_on_goal) reached = false;
      if (train) tick();
    }
    if (hierarchical() && !traj.steps.empty()) push_hier(s.position, env_.achieved(s.position, task.goal));
    if (traj.achieved.empty()) traj.achieved.push_back(s.position);
    out.success = env_.achieved(traj.achieved.back(), task.goal);
    return out;
  }

  // --- per-step bookkeeping --------------------------------------------------

  void tick() {
    ++step_;
    if (lower_ && lower_replay_.size() >= static_cast<std::size_t>(cfg_.lower_warmup) &&
        step_ % cfg_.lower_update_every == 0) {
      const auto batch = lower_replay_.sample(static_cast<std::size_t>(cfg_.sac.batch_size), update_rng_);
      last_critic_loss_ = lower_->sac_update(batch, update_rng_).critic_loss;
      if (!std::isfinite(last_critic_loss_)) diverged("lower critic loss");
    }
    if (hier_ && hier_replay_.size() >= static_cast<std::size_t>(std::max(2, cfg_.lower_warmup / k_factor())) &&
        step_ % cfg_.higher_update_every == 0) {
      hier_update();
    }
    if (uses_preferences() && step_ % cfg_.relabel_every == 0) relabel();
    if (uses_preferences() && step_ % cfg_.higher_update_every == 0 &&
        store_->labeled_count() >= cfg_.min_labeled_pairs) {
      preference_update();
    }
    store_->set_training_step(step_);
    if (step_ % cfg_.eval_every == 0 || step_ == cfg_.total_steps) evaluate();
  }

  int k_factor() const { return std::max(1, cfg_.env.subgoal_interval); }

  void hier_update() {
    const auto idx = hier_replay_.sample_indices(static_cast<std::size_t>(cfg_.sac.batch_size), update_rng_);
    lower::SacBatch b;
    const auto n = static_cast<Eigen::Index>(idx.size());
    const auto dim = static_cast<Eigen::Index>(hier_->obs_dim());
    b.obs.resize(n, dim);
    b.next_obs.resize(n, dim);
    if (discrete_) {
      b.masks.resize(n, static_cast<Eigen::Index>(cell_mask_.size()));
      b.next_masks.resize(n, static_cast<Eigen::Index>(cell_mask_.size()));
    } else {
      b.continuous_actions.resize(n, 2);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& t = hier_replay_[idx[static_cast<std::size_t>(i)]];
      b.obs.row(i) = Eigen::Map<const Eigen::RowVectorXd>(t.obs.data(), dim);
      b.next_obs.row(i) = Eigen::Map<const Eigen::RowVectorXd>(t.next_obs.data(), dim);
      if (discrete_) {
        b.actions.push_back(t.action);
        const Eigen::Map<const Eigen::RowVectorXd> m(cell_mask_.data(), static_cast<Eigen::Index>(cell_mask_.size()));
        b.masks.row(i) = m;
        b.next_masks.row(i) = m;
      } else {
        b.continuous_actions(i, 0) = t.unit[0];
        b.continuous_actions(i, 1) = t.unit[1];
      }
      b.rewards.push_back(t.reward);
      b.discounts.push_back(t.discount);
    }
    const auto d = hier_->update(b, update_rng_);
    last_higher_loss_ = d.actor_loss;
    if (!std::isfinite(d.critic_loss) || !std::isfinite(d.actor_loss)) diverged("higher SAC loss");
  }

  void relabel() {
    std::vector<pref::HighTrajectory> eps(recent_.begin(), recent_.end());
    const auto picks = pref::sample_pairs(eps, static_cast<std::size_t>(cfg_.reward_batch_size), pair_rng_);
    std::vector<std::int64_t> ids;
    for (const auto& [i, j] : picks) {
      pref::PreferencePair p;
      p.tau1 = eps[i];
      p.tau2 = eps[j];
      ids.push_back(store_->add(std::move(p)));
    }
    std::vector<std::int64_t> remaining = ids;
    if (cfg_.oracle == OracleMode::Human) {
      remaining = store_->wait_for_labels(ids, std::chrono::milliseconds(cfg_.human_timeout_ms));
    }
    for (auto id : remaining) {
      const auto p = store_->get(id);
      store_->label(id, pref::oracle_label(p->tau1, p->tau2, cfg_.tie_tol), pref::LabelSource::Oracle);
    }
  }

  double value_k(const HighStep& s) const {
    return lower_->value_estimate(env::EnvState{s.position, layout_}, s.subgoal);
  }

  void preference_update() {
    ChoiceModel* model = choice_model();
    const auto batch = store_->sample_labeled(static_cast<std::size_t>(cfg_.higher_batch_pairs), update_rng_);
    std::vector<double> grad(model->params().size(), 0.0);
    LossResult res;
    if (cfg_.variant == Variant::DpoFlat) {
      const double ref = discrete_ ? kFlatMoveLogRef : kUnitBoxLogRef;
      res = dpo_flat_loss(*model, [ref](const HighStep&, const env::Goal&) { return ref; }, batch, cfg_.kl_alpha,
                          grad, cfg_.length_normalize);
    } else {
      const double lambda = cfg_.variant == Variant::DipperNoV ? 0.0 : cfg_.lambda;
      if (lambda != 0.0 && cfg_.value_steps > 0) lower_->train_value_k(lower_replay_, cfg_.value_steps, update_rng_);
      // V^k read as plain numbers: no gradient path into the lower level.
      res = dipper_loss_practical(
          *model, [this](const HighStep& s, const env::Goal&) { return value_k(s); }, batch, cfg_.kl_alpha, lambda,
          grad, cfg_.length_normalize);
    }
    last_higher_loss_ = res.loss;
    if (!std::isfinite(res.loss) || !nn::all_finite(grad)) diverged("higher preference loss");
    nn::adam_step(higher_opt_, model->params(), grad);
  }

  // --- evaluation ------------------------------------------------------------

  void evaluate() {
    Rng eval_rng = split_stream(seed_, "eval");
    Rng saved_act = act_rng_;
    int wins = 0;
    for (int e = 0; e < cfg_.eval_episodes; ++e) wins += episode(eval_rng, false).success ? 1 : 0;
    act_rng_ = saved_act;
    MetricsRow row;
    row.step = step_;
    row.seed = seed_;
    row.success_rate = static_cast<double>(wins) / cfg_.eval_episodes;
    row.loss_higher = last_higher_loss_;
    row.loss_lower_critic = last_critic_loss_;
    row.mean_vk = mean_recent_vk();
    row.pairs_labeled = store_->labeled_count();
    metrics_.push_back(row);
    if (hooks_.on_metrics) hooks_.on_metrics(row);
  }

  double mean_recent_vk() const {
    if (!lower_ || !hierarchical() || recent_.empty()) return 0.0;
    std::vector<std::pair<env::EnvState, env::Goal>> q;
    const std::size_t from = recent_.size() > 10 ? recent_.size() - 10 : 0;
    for (std::size_t i = from; i < recent_.size(); ++i) {
      for (const auto& s : recent_[i].steps) q.emplace_back(env::EnvState{s.position, layout_}, s.subgoal);
    }
    if (q.empty()) return 0.0;
    const auto v = lower_->value_estimates(q);
    double sum = 0.0;
    for (double x : v) sum += x;
    return sum / static_cast<double>(v.size());
  }

  // --- checkpoints -------------------------------------------------------------

  void save_checkpoints(const std::string& tag = "") const {
    if (hooks_.checkpoint_dir.empty()) return;
    std::filesystem::create_directories(hooks_.checkpoint_dir);
    const std::string base = hooks_.checkpoint_dir + "/" + tag;
    if (lower_) {
      nn::save_checkpoint(base + "lower_actor", lower_->learner().actor());
      nn::save_checkpoint(base + "lower_critic0", lower_->learner().critic(0));
      nn::save_checkpoint(base + "lower_critic1", lower_->learner().critic(1));
      nn::save_checkpoint(base + "lower_value", lower_->value_head().params);
    }
    if (cat_policy_) nn::save_checkpoint(base + "higher_policy", cat_policy_->param_vector());
    if (gauss_policy_) {
      nn::ParamVector pv;
      pv.values.assign(gauss_policy_->params().begin(), gauss_policy_->params().end());
      nn::save_checkpoint(base + "higher_policy", pv);
    }
    if (hier_) nn::save_checkpoint(base + "higher_actor", hier_->actor());
  }

  [[noreturn]] void diverged(const std::string& what) const {
    save_checkpoints("diverged_");
    throw DivergenceError(what + " became non-finite at step " + std::to_string(step_) + " (seed " +
                          std::to_string(seed_) + ")");
  }

  DipperConfig cfg_;
  std::uint64_t seed_;
  RunHooks hooks_;
  env::MazeEnv env_;
  Rng task_rng_, act_rng_, update_rng_, pair_rng_;
  std::shared_ptr<const env::MazeLayout> layout_;
  bool discrete_ = true;
  env::Goal fixed_goal_;
  std::unique_ptr<pref::PreferenceStore> own_store_;
  pref::PreferenceStore* store_ = nullptr;

  std::unique_ptr<lower::LowerAgent> lower_;
  std::unique_ptr<MlpChoiceModel> cat_policy_;
  std::unique_ptr<GaussianGoalModel> gauss_policy_;
  std::unique_ptr<lower::SacLearner> hier_;
  std::vector<double> cell_mask_;
  nn::AdamState higher_opt_;

  lower::LowerReplay lower_replay_;
  lower::ReplayBuffer<HierTransition> hier_replay_;
  std::deque<pref::HighTrajectory> recent_;

  long step_ = 0;
  std::int64_t episode_id_ = 0;
  double last_higher_loss_ = 0.0;
  double last_critic_loss_ = 0.0;
  std::vector<MetricsRow> metrics_;
};

}  // namespace

RunResult train_dipper(const DipperConfig& config, std::uint64_t seed, const RunHooks& hooks) {
  Trainer t(config, seed, hooks);
  return t.run();
}

}  // namespace dipper::core
