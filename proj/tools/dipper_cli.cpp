#include <atomic>
#include <chrono>
#include <csignal>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"

#include "dipper/errors.hpp"
#include "dipper/harness.hpp"

namespace fs = std::filesystem;
using namespace dipper;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

void log_stderr(const std::string& line) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%H:%M:%S", std::localtime(&now));
  std::cerr << "[" << stamp << "] " << line << std::endl;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::uint64_t>(v));
    } catch (const std::logic_error&) {
      throw ConfigError("--seed expects comma-separated non-negative integers, got '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError("--seed lists no seeds");
  return out;
}

struct Overrides {
  std::string config;
  std::string seeds;
  std::string variant;
  std::string oracle;
  std::string out;
  int port = 8080;
};

harness::ExperimentConfig resolve(const Overrides& o) {
  auto c = harness::load_config(o.config);
  if (!o.seeds.empty()) c.seeds = parse_seeds(o.seeds);
  if (!o.variant.empty()) {
    c.algo.variant = core::variant_from_string(o.variant);
    if (c.algo.variant == core::Variant::DipperNoV) c.algo.lambda = 0.0;
  }
  if (!o.oracle.empty()) c.algo.oracle = o.oracle == "human" ? core::OracleMode::Human : core::OracleMode::Scripted;
  if (!o.out.empty()) c.out_dir = o.out;
  c.algo.validate();
  return c;
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON experiment config")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seeds, "comma-separated seeds, e.g. 0,1,2");
  cmd->add_option("--variant", o.variant, "DIPPER, DIPPER_NO_V, DPO_FLAT, HIER or FLAT");
  cmd->add_option("--oracle", o.oracle, "preference source")->check(CLI::IsMember({"scripted", "human"}));
  cmd->add_option("--out", o.out, "output directory");
}

int report(const std::vector<harness::ExperimentOutcome>& outcomes) {
  bool ok = true;
  for (const auto& e : outcomes) {
    std::cout << e.dir.string() << ": final mean success " << e.final_mean() << "\n";
    for (const auto& s : e.seeds) {
      if (!s.ok) std::cout << "  seed " << s.seed << " failed: " << s.error << "\n";
    }
    ok = ok && e.ok();
  }
  return ok ? 0 : 1;
}

int cmd_run(const Overrides& o, bool sweep) {
  const auto config = resolve(o);
  harness::RunOptions options;
  options.log = log_stderr;
  std::unique_ptr<harness::LabelServer> server;
  if (config.algo.oracle == core::OracleMode::Human) {
    server = std::make_unique<harness::LabelServer>();
    const int port = server->start("127.0.0.1", o.port);
    log_stderr("label service on http://127.0.0.1:" + std::to_string(port));
    options.on_seed_store = [&server](pref::PreferenceStore* s) { server->set_store(s); };
  }
  if (sweep) return report(harness::run_sweep(config, options));
  return report({harness::run_experiment(config, options)});
}

int cmd_serve(const std::string& dataset, int port) {
  if (dataset.empty()) throw ConfigError("serve-labels needs --dataset <file>");
  if (fs::path(dataset).has_parent_path()) fs::create_directories(fs::path(dataset).parent_path());
  pref::PreferenceStore store(dataset, pref::PreferenceStore::Open::Resume);
  harness::LabelServer server(&store);
  const int bound = server.start("127.0.0.1", port);
  log_stderr("serving " + dataset + " on http://127.0.0.1:" + std::to_string(bound) + " (" +
             std::to_string(store.pending_count()) + " pending)");
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}

int cmd_plot(const std::vector<std::string>& dirs, const std::string& out) {
  std::vector<fs::path> paths(dirs.begin(), dirs.end());
  harness::PlotWarnings warnings;
  const std::string table = harness::emit_plot_data(paths, &warnings);
  for (const auto& w : warnings.messages) std::cerr << "warning: " << w << "\n";
  if (out.empty()) {
    std::cout << table;
    return 0;
  }
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw IoError("cannot write " + out);
  f << table;
  return 0;
}

int cmd_verify(std::uint64_t seed) {
  bool ok = true;
  for (const auto& c : harness::run_verify_suite(seed)) {
    std::cout << (c.passed ? "PASS " : "FAIL ") << c.name << ": " << c.detail << "\n";
    ok = ok && c.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical preference learning on grid mazes"};
  app.require_subcommand(1);

  Overrides run_o, sweep_o;
  auto* run = app.add_subcommand("run", "train every seed of one configuration");
  add_common(run, run_o);
  run->add_option("--port", run_o.port, "label service port with --oracle human");

  auto* sweep = app.add_subcommand("sweep", "train over the configured lambda / kl_alpha grid");
  add_common(sweep, sweep_o);
  sweep->add_option("--port", sweep_o.port, "label service port with --oracle human");

  std::string dataset;
  int serve_port = 8080;
  auto* serve = app.add_subcommand("serve-labels", "serve a preference dataset to the labeling UI");
  serve->add_option("--dataset", dataset, "JSON-lines preference dataset")->required();
  serve->add_option("--port", serve_port, "port (0 picks a free one)");

  std::vector<std::string> plot_dirs;
  std::string plot_out;
  auto* plot = app.add_subcommand("plot-data", "emit algorithm,step,mean,std for run directories");
  plot->add_option("dirs", plot_dirs, "experiment or output directories")->required();
  plot->add_option("--out", plot_out, "output CSV (stdout when omitted)");

  std::string verify_seed = "0";
  auto* verify = app.add_subcommand("verify", "run the tabular identity suite");
  verify->add_option("--seed", verify_seed, "instance seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_o, false);
    if (*sweep) return cmd_run(sweep_o, true);
    if (*serve) return cmd_serve(dataset, serve_port);
    if (*plot) return cmd_plot(plot_dirs, plot_out);
    if (*verify) return cmd_verify(parse_seeds(verify_seed).front());
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
