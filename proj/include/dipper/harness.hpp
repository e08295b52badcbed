#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "dipper/dipper_core.hpp"
#include "dipper/preference.hpp"

namespace dipper::harness {

struct SweepGrid {
  std::vector<double> lambda;
  std::vector<double> kl_alpha;
};

struct ExperimentConfig {
  core::DipperConfig algo;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::string out_dir = "runs";
  SweepGrid sweep;
};

// Strict parsing: unknown keys and wrongly typed values raise ConfigError.
// Missing keys keep their defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
// Complete snapshot with every field resolved; round-trips through
// config_from_json.
nlohmann::json config_to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

inline constexpr const char* kMetricsHeader = "step,seed,success_rate,loss_higher,loss_lower_critic,mean_vk,pairs_labeled";
std::string format_metrics_row(const core::MetricsRow& r);
std::vector<core::MetricsRow> read_metrics_csv(const std::filesystem::path& path);

struct AggregateRow {
  long step = 0;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over seeds
  int n = 0;
};

// Per-step mean and standard deviation over seeds; rows are matched by step.
std::vector<AggregateRow> aggregate(const std::vector<std::vector<core::MetricsRow>>& per_seed);

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double final_success = 0.0;
};

struct ExperimentOutcome {
  std::filesystem::path dir;
  std::vector<SeedOutcome> seeds;
  std::vector<AggregateRow> aggregate;
  bool ok() const;
  double final_mean() const;
};

struct RunOptions {
  // Called with each seed's dataset before that seed trains, and with
  // nullptr once it finishes (used to attach the label service).
  std::function<void(pref::PreferenceStore*)> on_seed_store;
  std::function<void(const std::string&)> log;
};

// Runs every seed into <out_dir>/<variant>/seed_<s>/ (metrics.csv,
// preferences.jsonl, checkpoints/), then writes <out_dir>/<variant>/
// aggregate.csv and config.json. A failing seed is recorded and the
// remaining seeds still run.
ExperimentOutcome run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

// One experiment per grid point under <out_dir>/sweep/<param>_<value>/.
std::vector<ExperimentOutcome> run_sweep(const ExperimentConfig& config, const RunOptions& options = {});

struct PlotWarnings {
  std::vector<std::string> messages;
};

// Long-format CSV "algorithm,step,mean,std" over the given experiment
// directories (each holding seed_*/metrics.csv). Seeds or experiments with
// differing evaluation grids are resampled onto the coarsest grid by
// carrying the latest value at or before each grid step.
std::string emit_plot_data(const std::vector<std::filesystem::path>& run_dirs, PlotWarnings* warnings = nullptr);

// HTTP label service over a preference store. The store can be swapped
// while serving; with no store the queue reads as empty.
class LabelServer {
 public:
  explicit LabelServer(pref::PreferenceStore* store = nullptr);
  ~LabelServer();
  LabelServer(const LabelServer&) = delete;
  LabelServer& operator=(const LabelServer&) = delete;

  // Binds and serves on a background thread; port 0 picks a free port.
  // Throws ConfigError when the port cannot be bound. Returns the port.
  int start(const std::string& host, int port);
  void stop();
  void set_store(pref::PreferenceStore* store);
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

struct VerifyCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Tabular identity suite: objective equivalence, closed form against brute
// force, and loss-reduction identities on random instances.
std::vector<VerifyCheck> run_verify_suite(std::uint64_t seed = 0);

// JSON body served for one pending pair.
nlohmann::json pair_view(const pref::PreferencePair& p, const pref::PreferenceStore& store);

}  // namespace dipper::harness
