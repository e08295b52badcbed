#include <fstream>
#include <set>

#include "dipper/errors.hpp"
#include "dipper/harness.hpp"

namespace dipper::harness {

using nlohmann::json;

namespace {

// Reads fields of one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ConfigError("'" + name_ + "' must be a JSON object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError("unknown config key '" + qualified(key) + "'");
    }
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config key '" + qualified(key) + "' has the wrong type");
    }
  }

  void get(const std::string& key, bool& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (!j_.at(key).is_boolean()) throw ConfigError("config key '" + qualified(key) + "' must be true or false");
    out = j_.at(key).get<bool>();
  }

  void get(const std::string& key, int& out) { get_integer(key, out); }
  void get(const std::string& key, long& out) { get_integer(key, out); }
  void get(const std::string& key, std::size_t& out) { get_integer(key, out); }

  const json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string qualified(const std::string& key) const { return name_.empty() ? key : name_ + "." + key; }

 private:
  template <typename T>
  void get_integer(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError("config key '" + qualified(key) + "' must be an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (v.get<long long>() < 0) throw ConfigError("config key '" + qualified(key) + "' must be non-negative");
    }
    out = v.get<T>();
  }

  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

std::string kind_name(env::EnvKind k) { return k == env::EnvKind::Discrete ? "discrete" : "continuous"; }

env::EnvKind kind_from(const std::string& s) {
  if (s == "discrete") return env::EnvKind::Discrete;
  if (s == "continuous") return env::EnvKind::Continuous;
  throw ConfigError("env.kind must be 'discrete' or 'continuous'");
}

std::string activation_name(nn::Activation a) { return a == nn::Activation::Tanh ? "tanh" : "relu"; }

nn::Activation activation_from(const std::string& s) {
  if (s == "tanh") return nn::Activation::Tanh;
  if (s == "relu") return nn::Activation::Relu;
  throw ConfigError("sac.activation must be 'tanh' or 'relu'");
}

std::string oracle_name(core::OracleMode m) { return m == core::OracleMode::Scripted ? "scripted" : "human"; }

}  // namespace

core::OracleMode oracle_from(const std::string& s) {
  if (s == "scripted") return core::OracleMode::Scripted;
  if (s == "human") return core::OracleMode::Human;
  throw ConfigError("oracle mode must be 'scripted' or 'human'");
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  auto& a = c.algo;
  Section top(j, "");
  if (const json* e = top.child("env")) {
    Section s(*e, "env");
    std::string kind = kind_name(a.env.kind);
    s.get("kind", kind);
    a.env.kind = kind_from(kind);
    s.get("width", a.env.width);
    s.get("height", a.env.height);
    s.get("subgoal_interval", a.env.subgoal_interval);
    s.get("horizon", a.env.horizon);
    s.get("epsilon", a.env.epsilon);
    s.get("continuous_step_scale", a.env.continuous_step_scale);
  }
  if (const json* e = top.child("algorithm")) {
    Section s(*e, "algorithm");
    std::string variant = core::to_string(a.variant);
    s.get("variant", variant);
    a.variant = core::variant_from_string(variant);
    s.get("kl_alpha", a.kl_alpha);
    s.get("lambda", a.lambda);
    s.get("value_steps", a.value_steps);
    s.get("total_steps", a.total_steps);
    s.get("eval_every", a.eval_every);
    s.get("eval_episodes", a.eval_episodes);
    s.get("relabel_every", a.relabel_every);
    s.get("reward_batch_size", a.reward_batch_size);
    s.get("recent_episodes", a.recent_episodes);
    s.get("min_labeled_pairs", a.min_labeled_pairs);
    s.get("higher_update_every", a.higher_update_every);
    s.get("higher_batch_pairs", a.higher_batch_pairs);
    s.get("higher_lr", a.higher_lr);
    s.get("higher_random_eps", a.higher_random_eps);
    s.get("eval_sample_policy", a.eval_sample_policy);
    s.get("length_normalize", a.length_normalize);
    s.get("lower_update_every", a.lower_update_every);
    s.get("lower_warmup", a.lower_warmup);
    s.get("replay_capacity", a.replay_capacity);
    s.get("tie_tol", a.tie_tol);
    s.get("terminate_on_goal", a.terminate_on_goal);
    s.get("randomize_layout", a.randomize_layout);
    s.get("randomize_goal", a.randomize_goal);
    s.get("condition_on_end_goal", a.condition_on_end_goal);
  }
  if (const json* e = top.child("sac")) {
    Section s(*e, "sac");
    s.get("gamma", a.sac.gamma);
    s.get("sac_alpha", a.sac.sac_alpha);
    s.get("polyak_tau", a.sac.polyak_tau);
    s.get("actor_lr", a.sac.actor_lr);
    s.get("critic_lr", a.sac.critic_lr);
    s.get("value_lr", a.sac.value_lr);
    s.get("batch_size", a.sac.batch_size);
    s.get("random_eps", a.sac.random_eps);
    s.get("noise_eps", a.sac.noise_eps);
    s.get("hidden_width", a.sac.hidden_width);
    s.get("n_hidden", a.sac.n_hidden);
    std::string act = activation_name(a.sac.activation);
    s.get("activation", act);
    a.sac.activation = activation_from(act);
    s.get("value_margin", a.sac.value_margin);
    s.get("min_reward", a.sac.min_reward);
  }
  if (const json* e = top.child("features")) {
    Section s(*e, "features");
    s.get("include_maze", a.features.include_maze);
    s.get("include_relative", a.features.include_relative);
    s.get("include_neighbors", a.features.include_neighbors);
  }
  if (const json* e = top.child("oracle")) {
    Section s(*e, "oracle");
    std::string mode = oracle_name(a.oracle);
    s.get("mode", mode);
    a.oracle = oracle_from(mode);
    s.get("human_timeout_ms", a.human_timeout_ms);
  }
  if (const json* e = top.child("sweep")) {
    Section s(*e, "sweep");
    s.get("lambda", c.sweep.lambda);
    s.get("kl_alpha", c.sweep.kl_alpha);
  }
  top.get("seeds", c.seeds);
  top.get("out_dir", c.out_dir);
  if (c.seeds.empty()) throw ConfigError("seeds must list at least one seed");
  if (a.variant == core::Variant::DipperNoV) a.lambda = 0.0;
  a.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  const auto& a = c.algo;
  return {
      {"env",
       {{"kind", kind_name(a.env.kind)},
        {"width", a.env.width},
        {"height", a.env.height},
        {"subgoal_interval", a.env.subgoal_interval},
        {"horizon", a.env.horizon},
        {"epsilon", a.env.epsilon},
        {"continuous_step_scale", a.env.continuous_step_scale}}},
      {"algorithm",
       {{"variant", core::to_string(a.variant)},
        {"kl_alpha", a.kl_alpha},
        {"lambda", a.lambda},
        {"value_steps", a.value_steps},
        {"total_steps", a.total_steps},
        {"eval_every", a.eval_every},
        {"eval_episodes", a.eval_episodes},
        {"relabel_every", a.relabel_every},
        {"reward_batch_size", a.reward_batch_size},
        {"recent_episodes", a.recent_episodes},
        {"min_labeled_pairs", a.min_labeled_pairs},
        {"higher_update_every", a.higher_update_every},
        {"higher_batch_pairs", a.higher_batch_pairs},
        {"higher_lr", a.higher_lr},
        {"higher_random_eps", a.higher_random_eps},
        {"eval_sample_policy", a.eval_sample_policy},
        {"length_normalize", a.length_normalize},
        {"lower_update_every", a.lower_update_every},
        {"lower_warmup", a.lower_warmup},
        {"replay_capacity", a.replay_capacity},
        {"tie_tol", a.tie_tol},
        {"terminate_on_goal", a.terminate_on_goal},
        {"randomize_layout", a.randomize_layout},
        {"randomize_goal", a.randomize_goal},
        {"condition_on_end_goal", a.condition_on_end_goal}}},
      {"sac",
       {{"gamma", a.sac.gamma},
        {"sac_alpha", a.sac.sac_alpha},
        {"polyak_tau", a.sac.polyak_tau},
        {"actor_lr", a.sac.actor_lr},
        {"critic_lr", a.sac.critic_lr},
        {"value_lr", a.sac.value_lr},
        {"batch_size", a.sac.batch_size},
        {"random_eps", a.sac.random_eps},
        {"noise_eps", a.sac.noise_eps},
        {"hidden_width", a.sac.hidden_width},
        {"n_hidden", a.sac.n_hidden},
        {"activation", activation_name(a.sac.activation)},
        {"value_margin", a.sac.value_margin},
        {"min_reward", a.sac.min_reward}}},
      {"features",
       {{"include_maze", a.features.include_maze},
        {"include_relative", a.features.include_relative},
        {"include_neighbors", a.features.include_neighbors}}},
      {"oracle", {{"mode", oracle_name(a.oracle)}, {"human_timeout_ms", a.human_timeout_ms}}},
      {"sweep", {{"lambda", c.sweep.lambda}, {"kl_alpha", c.sweep.kl_alpha}}},
      {"seeds", c.seeds},
      {"out_dir", c.out_dir},
  };
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace dipper::harness
