#pragma once

#include <array>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dipper/env.hpp"
#include "dipper/rng.hpp"

namespace dipper::pref {

// One decision of a trajectory: the state where it was taken and the chosen
// subgoal (or primitive move for flat policies). `state_index` and `choice`
// index tabular or categorical policies; continuous subgoals use choice = -1.
struct HighStep {
  env::Point position;
  env::Goal subgoal;
  int state_index = -1;
  int choice = -1;
};

struct HighTrajectory {
  std::vector<HighStep> steps;
  std::vector<env::Point> achieved;  // one entry per primitive step
  env::Goal end_goal;
  std::int64_t episode_id = 0;
  std::string layout_hash;
};

using Label = std::array<double, 2>;

enum class LabelSource { None, Oracle, Human };

struct PreferencePair {
  std::int64_t pair_id = -1;
  HighTrajectory tau1;
  HighTrajectory tau2;
  std::optional<Label> y;
  LabelSource source = LabelSource::None;
};

// True for (1,0), (0,1) and (0.5,0.5).
bool valid_label(const Label& y);

// exp(s1) / (exp(s1) + exp(s2)) as the sigmoid of the difference.
double bt_probability(double score1, double score2);

// log sigmoid(z), stable for large |z|.
double log_sigmoid(double z);

// Sum over pairs of -(y1 log P[1 > 2] + y2 log P[2 > 1]) with P from the
// Bradley-Terry model on the given trajectory scores.
double reward_model_loss(std::span<const Label> labels, std::span<const std::array<double, 2>> scores);

// -min over achieved points of the distance to the end goal.
double trajectory_score(const HighTrajectory& tau);

// Scripted preference: prefer the trajectory that came closer to the end
// goal; (0.5, 0.5) when the scores differ by less than tie_tol.
Label oracle_label(const HighTrajectory& tau1, const HighTrajectory& tau2, double tie_tol = 0.25);

// Up to n distinct unordered index pairs (i < j) of trajectories sharing
// layout and end goal, drawn uniformly.
std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(std::span<const HighTrajectory> episodes,
                                                              std::size_t n, Rng& rng);

nlohmann::json to_json(const HighStep& s);
nlohmann::json to_json(const HighTrajectory& t);
nlohmann::json to_json(const PreferencePair& p);
HighTrajectory trajectory_from_json(const nlohmann::json& j);
PreferencePair pair_from_json(const nlohmann::json& j);
std::string to_string(LabelSource s);
LabelSource label_source_from_string(const std::string& s);

enum class LabelResult { Ok, NotFound, AlreadyLabeled, Invalid };

// Preference dataset with a pending queue. Every mutation is appended to a
// JSON-lines file before it becomes visible: pair records when enqueued and
// label records when labeled. Layouts are stored once, keyed by hash, in a
// sidecar "<path>.layouts.json". All methods are thread-safe.
class PreferenceStore {
 public:
  enum class Open { Truncate, Resume };

  // In-memory store when path is empty. Resume replays an existing dataset
  // file (and its layout sidecar); Truncate starts a fresh file.
  explicit PreferenceStore(std::filesystem::path path = {}, Open mode = Open::Truncate);
  PreferenceStore(const PreferenceStore&) = delete;
  PreferenceStore& operator=(const PreferenceStore&) = delete;

  void register_layout(const env::MazeLayout& layout);
  std::optional<env::MazeLayout> layout(const std::string& hash) const;

  // Assigns the next pair id and stores the pair as pending (or labeled if
  // it already carries a label).
  std::int64_t add(PreferencePair pair);

  // Oldest pending pair, if any.
  std::optional<PreferencePair> next_pending() const;
  std::vector<std::int64_t> pending_ids() const;

  // First label wins; later attempts return AlreadyLabeled.
  LabelResult label(std::int64_t pair_id, const Label& y, LabelSource source);

  // Blocks until every listed pair is labeled or the timeout expires;
  // returns the ids still pending.
  std::vector<std::int64_t> wait_for_labels(const std::vector<std::int64_t>& ids,
                                            std::chrono::milliseconds timeout) const;

  std::optional<PreferencePair> get(std::int64_t pair_id) const;
  std::vector<PreferencePair> labeled_pairs() const;
  // n labeled pairs drawn uniformly with replacement, in labeling order space.
  std::vector<PreferencePair> sample_labeled(std::size_t n, Rng& rng) const;
  std::size_t pending_count() const;
  std::size_t labeled_count() const;
  std::size_t size() const;

  void set_training_step(std::int64_t step);
  std::int64_t training_step() const;

  const std::filesystem::path& path() const { return path_; }

 private:
  void append_line(const nlohmann::json& j);
  void write_layouts();

  std::filesystem::path path_;
  std::ofstream out_;
  mutable std::mutex mutex_;
  mutable std::condition_variable labeled_cv_;
  std::map<std::int64_t, PreferencePair> pairs_;
  std::vector<std::int64_t> labeled_order_;
  std::map<std::string, env::MazeLayout> layouts_;
  std::int64_t next_id_ = 0;
  std::int64_t training_step_ = 0;
};

}  // namespace dipper::pref
