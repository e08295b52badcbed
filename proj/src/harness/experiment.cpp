#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "dipper/errors.hpp"
#include "dipper/harness.hpp"

namespace dipper::harness {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string compact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

void log_line(const RunOptions& o, const std::string& s) {
  if (o.log) o.log(s);
}

std::vector<fs::path> seed_dirs(const fs::path& run_dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(run_dir)) throw IoError("not a run directory: " + run_dir.string());
  for (const auto& e : fs::directory_iterator(run_dir)) {
    if (e.is_directory() && e.path().filename().string().starts_with("seed_") &&
        fs::exists(e.path() / "metrics.csv")) {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool has_seeds(const fs::path& dir) {
  if (!fs::is_directory(dir)) return false;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && e.path().filename().string().starts_with("seed_")) return true;
  }
  return false;
}

// A directory is either one experiment (holds seed_*) or an output root
// whose variant and sweep-point experiments are collected in sorted order.
std::vector<fs::path> expand_run_dirs(const std::vector<fs::path>& dirs) {
  std::vector<fs::path> out;
  for (const auto& d : dirs) {
    const fs::path clean = d.has_filename() ? d : d.parent_path();
    if (!fs::is_directory(clean)) throw IoError("not a run directory: " + clean.string());
    if (has_seeds(clean)) {
      out.push_back(clean);
      continue;
    }
    std::vector<fs::path> found;
    for (const auto& e : fs::directory_iterator(clean)) {
      if (has_seeds(e.path())) found.push_back(e.path());
    }
    if (fs::is_directory(clean / "sweep")) {
      for (const auto& point : fs::directory_iterator(clean / "sweep")) {
        if (!point.is_directory()) continue;
        for (const auto& e : fs::directory_iterator(point.path())) {
          if (has_seeds(e.path())) found.push_back(e.path());
        }
      }
    }
    std::sort(found.begin(), found.end());
    if (found.empty()) throw IoError("no runs found under " + clean.string());
    out.insert(out.end(), found.begin(), found.end());
  }
  return out;
}

// Latest value at or before each grid step; NaN before the first row.
std::vector<double> step_hold(const std::vector<core::MetricsRow>& rows, const std::vector<long>& grid) {
  std::vector<double> out;
  std::size_t i = 0;
  double last = std::nan("");
  for (long s : grid) {
    while (i < rows.size() && rows[i].step <= s) last = rows[i++].success_rate;
    out.push_back(last);
  }
  return out;
}

}  // namespace

std::string format_metrics_row(const core::MetricsRow& r) {
  return std::to_string(r.step) + "," + std::to_string(r.seed) + "," + fmt(r.success_rate) + "," +
         fmt(r.loss_higher) + "," + fmt(r.loss_lower_critic) + "," + fmt(r.mean_vk) + "," +
         std::to_string(r.pairs_labeled);
}

std::vector<core::MetricsRow> read_metrics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw IoError(path.string() + ": unexpected header");
  std::vector<core::MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv(line);
    if (c.size() != 7) throw IoError(path.string() + ": malformed row '" + line + "'");
    try {
      core::MetricsRow r;
      r.step = std::stol(c[0]);
      r.seed = std::stoull(c[1]);
      r.success_rate = std::stod(c[2]);
      r.loss_higher = std::stod(c[3]);
      r.loss_lower_critic = std::stod(c[4]);
      r.mean_vk = std::stod(c[5]);
      r.pairs_labeled = std::stoull(c[6]);
      rows.push_back(r);
    } catch (const std::logic_error&) {
      throw IoError(path.string() + ": malformed row '" + line + "'");
    }
  }
  return rows;
}

std::vector<AggregateRow> aggregate(const std::vector<std::vector<core::MetricsRow>>& per_seed) {
  std::map<long, std::vector<double>> by_step;
  for (const auto& rows : per_seed) {
    for (const auto& r : rows) by_step[r.step].push_back(r.success_rate);
  }
  std::vector<AggregateRow> out;
  for (const auto& [step, v] : by_step) {
    AggregateRow a;
    a.step = step;
    a.n = static_cast<int>(v.size());
    for (double x : v) a.mean += x;
    a.mean /= a.n;
    for (double x : v) a.std += (x - a.mean) * (x - a.mean);
    a.std = std::sqrt(a.std / a.n);
    out.push_back(a);
  }
  return out;
}

bool ExperimentOutcome::ok() const {
  return !seeds.empty() && std::all_of(seeds.begin(), seeds.end(), [](const SeedOutcome& s) { return s.ok; });
}

double ExperimentOutcome::final_mean() const {
  double sum = 0.0;
  int n = 0;
  for (const auto& s : seeds) {
    if (!s.ok) continue;
    sum += s.final_success;
    ++n;
  }
  return n == 0 ? 0.0 : sum / n;
}

ExperimentOutcome run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  config.algo.validate();
  ExperimentOutcome outcome;
  outcome.dir = fs::path(config.out_dir) / core::to_string(config.algo.variant);
  fs::create_directories(outcome.dir);
  write_text(outcome.dir / "config.json", config_to_json(config).dump(2) + "\n");

  std::vector<std::vector<core::MetricsRow>> per_seed;
  for (const auto seed : config.seeds) {
    const fs::path dir = outcome.dir / ("seed_" + std::to_string(seed));
    fs::create_directories(dir);
    SeedOutcome so;
    so.seed = seed;
    std::ofstream csv(dir / "metrics.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write " + (dir / "metrics.csv").string());
    csv << kMetricsHeader << "\n" << std::flush;
    std::vector<core::MetricsRow> rows;
    try {
      pref::PreferenceStore store(dir / "preferences.jsonl");
      core::RunHooks hooks;
      hooks.store = &store;
      struct Detach {
        const RunOptions& o;
        ~Detach() {
          if (o.on_seed_store) o.on_seed_store(nullptr);
        }
      } detach{options};
      if (options.on_seed_store) options.on_seed_store(&store);
      hooks.checkpoint_dir = (dir / "checkpoints").string();
      hooks.on_metrics = [&](const core::MetricsRow& r) {
        rows.push_back(r);
        csv << format_metrics_row(r) << "\n" << std::flush;
        log_line(options, core::to_string(config.algo.variant) + " seed " + std::to_string(seed) + " step " +
                              std::to_string(r.step) + " success " + fmt(r.success_rate));
      };
      const auto result = core::train_dipper(config.algo, seed, hooks);
      so.ok = true;
      so.final_success = result.final_success;
    } catch (const std::exception& e) {
      so.error = e.what();
      log_line(options, "seed " + std::to_string(seed) + " failed: " + so.error);
    }
    per_seed.push_back(std::move(rows));
    outcome.seeds.push_back(so);
  }

  outcome.aggregate = aggregate(per_seed);
  std::string text = "step,mean,std,n\n";
  for (const auto& a : outcome.aggregate) {
    text += std::to_string(a.step) + "," + fmt(a.mean) + "," + fmt(a.std) + "," + std::to_string(a.n) + "\n";
  }
  write_text(outcome.dir / "aggregate.csv", text);
  return outcome;
}

std::vector<ExperimentOutcome> run_sweep(const ExperimentConfig& config, const RunOptions& options) {
  if (config.sweep.lambda.empty() && config.sweep.kl_alpha.empty()) {
    throw ConfigError("sweep needs a non-empty sweep.lambda or sweep.kl_alpha list");
  }
  std::vector<ExperimentOutcome> out;
  const auto run_point = [&](const std::string& param, double value) {
    ExperimentConfig c = config;
    (param == "lambda" ? c.algo.lambda : c.algo.kl_alpha) = value;
    c.out_dir = (fs::path(config.out_dir) / "sweep" / (param + "_" + compact(value))).string();
    log_line(options, "sweep point " + param + "=" + compact(value));
    out.push_back(run_experiment(c, options));
  };
  for (double v : config.sweep.lambda) run_point("lambda", v);
  for (double v : config.sweep.kl_alpha) run_point("kl_alpha", v);
  return out;
}

std::string emit_plot_data(const std::vector<fs::path>& run_dirs, PlotWarnings* warnings) {
  struct Run {
    std::string name;
    std::vector<std::vector<core::MetricsRow>> seeds;
  };
  std::vector<Run> runs;
  std::vector<long> grid;
  bool have_grid = false, mismatch = false;
  for (const auto& dir : expand_run_dirs(run_dirs)) {
    Run run;
    const fs::path clean = dir.has_filename() ? dir : dir.parent_path();
    run.name = clean.filename().string();
    // sweep points hold one variant directory each
    if (run.name == "DIPPER" || run.name == "DIPPER_NO_V" || run.name == "DPO_FLAT" || run.name == "HIER" ||
        run.name == "FLAT") {
      if (clean.parent_path().parent_path().filename() == "sweep") {
        run.name = clean.parent_path().filename().string();
      }
    }
    for (const auto& sd : seed_dirs(clean)) {
      auto rows = read_metrics_csv(sd / "metrics.csv");
      if (rows.empty()) continue;
      std::vector<long> steps;
      for (const auto& r : rows) steps.push_back(r.step);
      if (!have_grid) {
        grid = steps;
        have_grid = true;
      } else if (steps != grid) {
        mismatch = true;
        if (steps.size() < grid.size()) grid = steps;
      }
      run.seeds.push_back(std::move(rows));
    }
    if (run.seeds.empty() && warnings) warnings->messages.push_back(clean.string() + ": no metrics found");
    runs.push_back(std::move(run));
  }
  if (mismatch && warnings) {
    warnings->messages.push_back("evaluation grids differ; resampled onto the coarsest grid of " +
                                 std::to_string(grid.size()) + " points");
  }

  std::string out = "algorithm,step,mean,std\n";
  for (const auto& run : runs) {
    if (run.seeds.empty()) continue;
    std::vector<std::vector<double>> held;
    for (const auto& rows : run.seeds) held.push_back(step_hold(rows, grid));
    for (std::size_t g = 0; g < grid.size(); ++g) {
      double sum = 0.0;
      int n = 0;
      for (const auto& h : held) {
        if (std::isnan(h[g])) continue;
        sum += h[g];
        ++n;
      }
      if (n == 0) continue;
      const double mean = sum / n;
      double var = 0.0;
      for (const auto& h : held) {
        if (!std::isnan(h[g])) var += (h[g] - mean) * (h[g] - mean);
      }
      out += run.name + "," + std::to_string(grid[g]) + "," + fmt(mean) + "," + fmt(std::sqrt(var / n)) + "\n";
    }
  }
  return out;
}

}  // namespace dipper::harness
