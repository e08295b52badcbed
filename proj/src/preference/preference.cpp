#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <tuple>

#include "dipper/errors.hpp"
#include "dipper/preference.hpp"

namespace dipper::pref {

bool valid_label(const Label& y) {
  return (y[0] == 1.0 && y[1] == 0.0) || (y[0] == 0.0 && y[1] == 1.0) || (y[0] == 0.5 && y[1] == 0.5);
}

double log_sigmoid(double z) {
  if (z >= 0.0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

double bt_probability(double score1, double score2) {
  const double z = score1 - score2;
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double reward_model_loss(std::span<const Label> labels, std::span<const std::array<double, 2>> scores) {
  if (labels.size() != scores.size()) throw ShapeError("reward_model_loss: labels and scores differ in length");
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double z = scores[i][0] - scores[i][1];
    if (labels[i][0] != 0.0) loss -= labels[i][0] * log_sigmoid(z);
    if (labels[i][1] != 0.0) loss -= labels[i][1] * log_sigmoid(-z);
  }
  return loss;
}

double trajectory_score(const HighTrajectory& tau) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : tau.achieved) best = std::min(best, env::distance(p, tau.end_goal));
  if (tau.achieved.empty()) {
    for (const auto& s : tau.steps) best = std::min(best, env::distance(s.position, tau.end_goal));
  }
  return -best;
}

Label oracle_label(const HighTrajectory& tau1, const HighTrajectory& tau2, double tie_tol) {
  const double d = trajectory_score(tau1) - trajectory_score(tau2);
  if (std::abs(d) < tie_tol) return {0.5, 0.5};
  return d > 0.0 ? Label{1.0, 0.0} : Label{0.0, 1.0};
}

std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(std::span<const HighTrajectory> episodes,
                                                              std::size_t n, Rng& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    for (std::size_t j = i + 1; j < episodes.size(); ++j) {
      const auto& a = episodes[i];
      const auto& b = episodes[j];
      if (a.layout_hash == b.layout_hash && a.end_goal == b.end_goal) all.emplace_back(i, j);
    }
  }
  if (all.size() <= n) return all;
  // partial Fisher-Yates
  for (std::size_t k = 0; k < n; ++k) {
    const auto pick = std::uniform_int_distribution<std::size_t>(k, all.size() - 1)(rng);
    std::swap(all[k], all[pick]);
  }
  all.resize(n);
  return all;
}

nlohmann::json to_json(const HighStep& s) {
  return {{"position", {s.position.x, s.position.y}},
          {"subgoal", {s.subgoal.x, s.subgoal.y}},
          {"state_index", s.state_index},
          {"choice", s.choice}};
}

nlohmann::json to_json(const HighTrajectory& t) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : t.steps) steps.push_back(to_json(s));
  nlohmann::json achieved = nlohmann::json::array();
  for (const auto& p : t.achieved) achieved.push_back({p.x, p.y});
  return {{"steps", steps},
          {"achieved", achieved},
          {"end_goal", {t.end_goal.x, t.end_goal.y}},
          {"episode_id", t.episode_id},
          {"layout", t.layout_hash}};
}

std::string to_string(LabelSource s) {
  switch (s) {
    case LabelSource::Oracle: return "oracle";
    case LabelSource::Human: return "human";
    default: return "none";
  }
}

LabelSource label_source_from_string(const std::string& s) {
  if (s == "oracle") return LabelSource::Oracle;
  if (s == "human") return LabelSource::Human;
  if (s == "none") return LabelSource::None;
  throw ValidationError("unknown label source '" + s + "'");
}

nlohmann::json to_json(const PreferencePair& p) {
  nlohmann::json j{{"type", "pair"}, {"pair_id", p.pair_id}, {"tau1", to_json(p.tau1)}, {"tau2", to_json(p.tau2)}};
  j["y"] = p.y ? nlohmann::json{(*p.y)[0], (*p.y)[1]} : nlohmann::json(nullptr);
  j["source"] = to_string(p.source);
  return j;
}

namespace {

env::Point point_from_json(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

Label label_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
    throw ValidationError("label must be a two-element numeric array");
  }
  const Label y{j[0].get<double>(), j[1].get<double>()};
  if (!valid_label(y)) throw ValidationError("label must be [1,0], [0,1] or [0.5,0.5]");
  return y;
}

}  // namespace

HighTrajectory trajectory_from_json(const nlohmann::json& j) {
  HighTrajectory t;
  for (const auto& s : j.at("steps")) {
    t.steps.push_back({point_from_json(s.at("position")), point_from_json(s.at("subgoal")),
                       s.at("state_index").get<int>(), s.at("choice").get<int>()});
  }
  for (const auto& p : j.at("achieved")) t.achieved.push_back(point_from_json(p));
  t.end_goal = point_from_json(j.at("end_goal"));
  t.episode_id = j.at("episode_id").get<std::int64_t>();
  t.layout_hash = j.at("layout").get<std::string>();
  return t;
}

PreferencePair pair_from_json(const nlohmann::json& j) {
  PreferencePair p;
  p.pair_id = j.at("pair_id").get<std::int64_t>();
  p.tau1 = trajectory_from_json(j.at("tau1"));
  p.tau2 = trajectory_from_json(j.at("tau2"));
  if (j.contains("y") && !j.at("y").is_null()) p.y = label_from_json(j.at("y"));
  p.source = label_source_from_string(j.value("source", std::string("none")));
  return p;
}

PreferenceStore::PreferenceStore(std::filesystem::path path, Open mode) : path_(std::move(path)) {
  if (path_.empty()) return;
  if (mode == Open::Resume && std::filesystem::exists(path_)) {
    std::ifstream in(path_);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path_.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
      const std::string type = j.value("type", std::string("pair"));
      if (type == "pair") {
        PreferencePair p = pair_from_json(j);
        next_id_ = std::max(next_id_, p.pair_id + 1);
        if (p.y) labeled_order_.push_back(p.pair_id);
        pairs_[p.pair_id] = std::move(p);
      } else if (type == "label") {
        const auto id = j.at("pair_id").get<std::int64_t>();
        auto it = pairs_.find(id);
        if (it == pairs_.end() || it->second.y) continue;  // first label wins
        it->second.y = label_from_json(j.at("y"));
        it->second.source = label_source_from_string(j.value("source", std::string("none")));
        labeled_order_.push_back(id);
      } else {
        throw ValidationError(path_.string() + ":" + std::to_string(line_no) + ": unknown record type '" + type + "'");
      }
    }
    const auto sidecar = std::filesystem::path(path_.string() + ".layouts.json");
    if (std::filesystem::exists(sidecar)) {
      std::ifstream ls(sidecar);
      const auto j = nlohmann::json::parse(ls);
      for (const auto& [hash, layout] : j.items()) layouts_[hash] = env::layout_from_json(layout);
    }
    out_.open(path_, std::ios::app);
  } else {
    if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
    out_.open(path_, std::ios::trunc);
  }
  if (!out_) throw ConfigError("cannot open preference dataset " + path_.string());
}

void PreferenceStore::append_line(const nlohmann::json& j) {
  if (path_.empty()) return;
  out_ << j.dump() << '\n';
  out_.flush();
  if (!out_) throw std::runtime_error("failed writing preference dataset " + path_.string());
}

void PreferenceStore::write_layouts() {
  if (path_.empty()) return;
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [hash, layout] : layouts_) j[hash] = env::layout_to_json(layout);
  const auto sidecar = std::filesystem::path(path_.string() + ".layouts.json");
  const auto tmp = std::filesystem::path(sidecar.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << j.dump() << '\n';
  }
  std::filesystem::rename(tmp, sidecar);
}

void PreferenceStore::register_layout(const env::MazeLayout& layout) {
  std::lock_guard lock(mutex_);
  const auto [it, inserted] = layouts_.emplace(layout.hash(), layout);
  if (inserted) write_layouts();
}

std::optional<env::MazeLayout> PreferenceStore::layout(const std::string& hash) const {
  std::lock_guard lock(mutex_);
  const auto it = layouts_.find(hash);
  if (it == layouts_.end()) return std::nullopt;
  return it->second;
}

std::int64_t PreferenceStore::add(PreferencePair pair) {
  if (pair.tau1.layout_hash != pair.tau2.layout_hash || !(pair.tau1.end_goal == pair.tau2.end_goal)) {
    throw ArgumentError("paired trajectories must share layout and end goal");
  }
  if (pair.y && !valid_label(*pair.y)) throw ArgumentError("invalid preference label");
  std::lock_guard lock(mutex_);
  pair.pair_id = next_id_++;
  append_line(to_json(pair));
  if (pair.y) labeled_order_.push_back(pair.pair_id);
  const auto id = pair.pair_id;
  pairs_[id] = std::move(pair);
  if (pairs_[id].y) labeled_cv_.notify_all();
  return id;
}

std::optional<PreferencePair> PreferenceStore::next_pending() const {
  std::lock_guard lock(mutex_);
  for (const auto& [id, p] : pairs_) {
    if (!p.y) return p;
  }
  return std::nullopt;
}

std::vector<std::int64_t> PreferenceStore::pending_ids() const {
  std::lock_guard lock(mutex_);
  std::vector<std::int64_t> out;
  for (const auto& [id, p] : pairs_) {
    if (!p.y) out.push_back(id);
  }
  return out;
}

LabelResult PreferenceStore::label(std::int64_t pair_id, const Label& y, LabelSource source) {
  if (!valid_label(y)) return LabelResult::Invalid;
  std::lock_guard lock(mutex_);
  const auto it = pairs_.find(pair_id);
  if (it == pairs_.end()) return LabelResult::NotFound;
  if (it->second.y) return LabelResult::AlreadyLabeled;
  append_line({{"type", "label"}, {"pair_id", pair_id}, {"y", {y[0], y[1]}}, {"source", to_string(source)}});
  it->second.y = y;
  it->second.source = source;
  labeled_order_.push_back(pair_id);
  labeled_cv_.notify_all();
  return LabelResult::Ok;
}

std::vector<std::int64_t> PreferenceStore::wait_for_labels(const std::vector<std::int64_t>& ids,
                                                           std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mutex_);
  auto still_pending = [&] {
    std::vector<std::int64_t> out;
    for (auto id : ids) {
      const auto it = pairs_.find(id);
      if (it != pairs_.end() && !it->second.y) out.push_back(id);
    }
    return out;
  };
  labeled_cv_.wait_for(lock, timeout, [&] { return still_pending().empty(); });
  return still_pending();
}

std::optional<PreferencePair> PreferenceStore::get(std::int64_t pair_id) const {
  std::lock_guard lock(mutex_);
  const auto it = pairs_.find(pair_id);
  if (it == pairs_.end()) return std::nullopt;
  return it->second;
}

std::vector<PreferencePair> PreferenceStore::labeled_pairs() const {
  std::lock_guard lock(mutex_);
  std::vector<PreferencePair> out;
  out.reserve(labeled_order_.size());
  for (auto id : labeled_order_) out.push_back(pairs_.at(id));
  return out;
}

std::vector<PreferencePair> PreferenceStore::sample_labeled(std::size_t n, Rng& rng) const {
  std::lock_guard lock(mutex_);
  std::vector<PreferencePair> out;
  if (labeled_order_.empty()) return out;
  out.reserve(n);
  std::uniform_int_distribution<std::size_t> pick(0, labeled_order_.size() - 1);
  for (std::size_t i = 0; i < n; ++i) out.push_back(pairs_.at(labeled_order_[pick(rng)]));
  return out;
}

std::size_t PreferenceStore::pending_count() const {
  std::lock_guard lock(mutex_);
  return pairs_.size() - labeled_order_.size();
}

std::size_t PreferenceStore::labeled_count() const {
  std::lock_guard lock(mutex_);
  return labeled_order_.size();
}

std::size_t PreferenceStore::size() const {
  std::lock_guard lock(mutex_);
  return pairs_.size();
}

void PreferenceStore::set_training_step(std::int64_t step) {
  std::lock_guard lock(mutex_);
  training_step_ = step;
}

std::int64_t PreferenceStore::training_step() const {
  std::lock_guard lock(mutex_);
  return training_step_;
}

}  // namespace dipper::pref
