#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <gtest/gtest.h>

#include "dipper/errors.hpp"
#include "dipper/harness.hpp"
#include "test_support.hpp"

#include "httplib.h"

using namespace dipper;
using namespace dipper::harness;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_metrics(const fs::path& dir, std::uint64_t seed, const std::vector<std::pair<long, double>>& rows) {
  fs::create_directories(dir);
  std::ofstream out(dir / "metrics.csv");
  out << kMetricsHeader << "\n";
  for (const auto& [step, success] : rows) {
    core::MetricsRow r;
    r.step = step;
    r.seed = seed;
    r.success_rate = success;
    out << format_metrics_row(r) << "\n";
  }
}

std::vector<core::MetricsRow> rows_of(std::uint64_t seed, const std::vector<double>& values, long every = 100) {
  std::vector<core::MetricsRow> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    core::MetricsRow r;
    r.step = every * static_cast<long>(i + 1);
    r.seed = seed;
    r.success_rate = values[i];
    out.push_back(r);
  }
  return out;
}

ExperimentConfig tiny_experiment(const fs::path& out) {
  ExperimentConfig c;
  auto& a = c.algo;
  a.total_steps = 600;
  a.eval_every = 300;
  a.eval_episodes = 2;
  a.relabel_every = 200;
  a.reward_batch_size = 5;
  a.min_labeled_pairs = 5;
  a.lower_warmup = 100;
  a.lower_update_every = 4;
  a.value_steps = 1;
  a.replay_capacity = 2000;
  a.sac.batch_size = 16;
  a.sac.hidden_width = 8;
  a.sac.n_hidden = 1;
  a.features.include_maze = false;
  c.seeds = {0, 1};
  c.out_dir = out.string();
  return c;
}

pref::PreferencePair sample_pair(const env::MazeLayout& layout) {
  pref::PreferencePair p;
  for (auto* t : {&p.tau1, &p.tau2}) {
    t->layout_hash = layout.hash();
    t->end_goal = {1.0, 1.0};
    pref::HighStep s;
    s.position = {8.0, 7.0};
    s.subgoal = {5.0, 5.0};
    s.state_index = 3;
    s.choice = 60;
    t->steps.push_back(s);
    t->achieved = {{8.0, 6.0}, {7.0, 6.0}};
  }
  return p;
}

}  // namespace

// --- config ----------------------------------------------------------------

TEST(Config, EmptyDocumentKeepsDefaults) {
  const auto c = config_from_json(json::object());
  EXPECT_EQ(c.algo.variant, core::Variant::Dipper);
  EXPECT_EQ(c.algo.env.width, 11);
  EXPECT_EQ(c.algo.env.height, 10);
  EXPECT_EQ(c.algo.env.subgoal_interval, 5);
  EXPECT_EQ(c.algo.reward_batch_size, 50);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0, 1, 2, 3, 4}));
}

TEST(Config, UnknownKeysAreErrors) {
  EXPECT_THROW(config_from_json(json{{"seeds", {1}}, {"sedes", {1}}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"algorithm", {{"lamda", 0.1}}}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"env", {{"width", 11}, {"depth", 3}}}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"sac", {{"gama", 0.9}}}}), ConfigError);
  try {
    config_from_json(json{{"features", {{"include_mazes", true}}}});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("features.include_mazes"), std::string::npos);
  }
}

TEST(Config, WrongTypesAreErrors) {
  EXPECT_THROW(config_from_json(json{{"algorithm", {{"lambda", "0.1"}}}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"algorithm", {{"total_steps", 1.5}}}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"algorithm", {{"length_normalize", 1}}}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"sac", {{"batch_size", -3}}}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"env", 5}}), ConfigError);
  EXPECT_THROW(config_from_json(json::array()), ConfigError);
  EXPECT_THROW(config_from_json(json{{"seeds", json::array()}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"algorithm", {{"variant", "dipper"}}}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"oracle", {{"mode", "robot"}}}}), ConfigError);
}

TEST(Config, ValidationRunsOnLoad) {
  EXPECT_THROW(config_from_json(json{{"algorithm", {{"kl_alpha", 0.0}}}}), ConfigError);
  EXPECT_THROW(config_from_json(json{{"algorithm", {{"randomize_layout", true}}}}), UnsupportedConfiguration);
  const auto nov = config_from_json(json{{"algorithm", {{"variant", "DIPPER_NO_V"}, {"lambda", 0.5}}}});
  EXPECT_EQ(nov.algo.lambda, 0.0);
}

TEST(Config, SnapshotRoundTripsLosslessly) {
  json j = {{"env", {{"width", 9}, {"height", 8}, {"subgoal_interval", 4}, {"kind", "continuous"}}},
            {"algorithm", {{"variant", "HIER"}, {"lambda", 0.37}, {"kl_alpha", 0.123456789}, {"total_steps", 12345}}},
            {"sac", {{"activation", "relu"}, {"batch_size", 77}}},
            {"features", {{"include_neighbors", false}}},
            {"oracle", {{"mode", "human"}, {"human_timeout_ms", 1234}}},
            {"sweep", {{"lambda", {0.01, 0.1, 1.0}}}},
            {"seeds", {3, 9}},
            {"out_dir", "somewhere"}};
  const auto c = config_from_json(j);
  const auto snap = config_to_json(c);
  EXPECT_EQ(config_to_json(config_from_json(snap)), snap);
  EXPECT_EQ(snap["algorithm"]["kl_alpha"].get<double>(), 0.123456789);
  EXPECT_EQ(snap["sac"]["activation"], "relu");
  EXPECT_EQ(snap["oracle"]["mode"], "human");
  EXPECT_EQ(snap["env"]["kind"], "continuous");
  EXPECT_EQ(c.sweep.lambda, (std::vector<double>{0.01, 0.1, 1.0}));
}

TEST(Config, LoadReportsMissingAndMalformedFiles) {
  dipper::testing::TempDir dir("cfg");
  EXPECT_THROW(load_config(dir.path() / "nope.json"), ConfigError);
  std::ofstream(dir.path() / "bad.json") << "{\"seeds\": [1,";
  EXPECT_THROW(load_config(dir.path() / "bad.json"), ConfigError);
  std::ofstream(dir.path() / "ok.json") << "{\"seeds\": [7]}";
  EXPECT_EQ(load_config(dir.path() / "ok.json").seeds, std::vector<std::uint64_t>{7});
}

// --- metrics ---------------------------------------------------------------

TEST(Metrics, CsvRoundTrips) {
  dipper::testing::TempDir dir("csv");
  core::MetricsRow r;
  r.step = 5000;
  r.seed = 3;
  r.success_rate = 0.35;
  r.loss_higher = 0.6931471805599453;
  r.loss_lower_critic = 1.25e-3;
  r.mean_vk = -7.5;
  r.pairs_labeled = 250;
  std::ofstream(dir.path() / "m.csv") << kMetricsHeader << "\n" << format_metrics_row(r) << "\n";
  const auto rows = read_metrics_csv(dir.path() / "m.csv");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].step, 5000);
  EXPECT_EQ(rows[0].seed, 3u);
  EXPECT_EQ(rows[0].success_rate, 0.35);
  EXPECT_NEAR(rows[0].loss_higher, r.loss_higher, 1e-8);
  EXPECT_EQ(rows[0].mean_vk, -7.5);
  EXPECT_EQ(rows[0].pairs_labeled, 250u);
  std::ofstream(dir.path() / "bad.csv") << "step,seed\n1,2\n";
  EXPECT_THROW(read_metrics_csv(dir.path() / "bad.csv"), IoError);
}

TEST(Aggregate, SingleRunHasZeroSpread) {
  const auto agg = aggregate({rows_of(0, {0.1, 0.4, 0.9})});
  ASSERT_EQ(agg.size(), 3u);
  EXPECT_EQ(agg[1].mean, 0.4);
  EXPECT_EQ(agg[1].std, 0.0);
  EXPECT_EQ(agg[1].n, 1);
}

TEST(Aggregate, TwoConstantRuns) {
  for (const auto& a : aggregate({rows_of(0, {0.5, 0.5}), rows_of(1, {0.5, 0.5})})) {
    EXPECT_EQ(a.mean, 0.5);
    EXPECT_EQ(a.std, 0.0);
    EXPECT_EQ(a.n, 2);
  }
}

TEST(Aggregate, FiveSeedsMatchDirectRecomputation) {
  Rng rng = split_stream(1, "agg");
  std::vector<std::vector<core::MetricsRow>> runs;
  for (int s = 0; s < 5; ++s) {
    std::vector<double> v;
    for (int i = 0; i < 8; ++i) v.push_back(uniform01(rng));
    runs.push_back(rows_of(static_cast<std::uint64_t>(s), v));
  }
  const auto agg = aggregate(runs);
  for (std::size_t i = 0; i < agg.size(); ++i) {
    double m = 0.0;
    for (const auto& r : runs) m += r[i].success_rate / 5.0;
    double ss = 0.0;
    for (const auto& r : runs) ss += (r[i].success_rate - m) * (r[i].success_rate - m);
    EXPECT_NEAR(agg[i].mean, m, 1e-12);
    EXPECT_NEAR(agg[i].std, std::sqrt(ss / 5.0), 1e-9);
  }
  auto shuffled = runs;
  std::reverse(shuffled.begin(), shuffled.end());
  std::swap(shuffled[0], shuffled[2]);
  const auto again = aggregate(shuffled);
  for (std::size_t i = 0; i < agg.size(); ++i) {
    EXPECT_NEAR(again[i].mean, agg[i].mean, 1e-15);
    EXPECT_NEAR(again[i].std, agg[i].std, 1e-15);
  }
}

// --- plot data -------------------------------------------------------------

TEST(PlotData, SingleRunIsItsOwnMean) {
  dipper::testing::TempDir dir("plot1");
  write_metrics(dir.path() / "DIPPER" / "seed_0", 0, {{100, 0.2}, {200, 0.6}});
  PlotWarnings w;
  const auto table = emit_plot_data({dir.path() / "DIPPER"}, &w);
  EXPECT_EQ(table, "algorithm,step,mean,std\nDIPPER,100,0.2,0\nDIPPER,200,0.6,0\n");
  EXPECT_TRUE(w.messages.empty());
}

TEST(PlotData, MismatchedGridsAreResampledWithWarning) {
  dipper::testing::TempDir dir("plot2");
  write_metrics(dir.path() / "DIPPER" / "seed_0", 0, {{100, 0.1}, {200, 0.2}, {300, 0.3}, {400, 0.4}});
  write_metrics(dir.path() / "DIPPER" / "seed_1", 1, {{200, 0.5}, {400, 0.7}});
  write_metrics(dir.path() / "FLAT" / "seed_0", 0, {{100, 0.0}, {200, 0.0}, {300, 0.5}, {400, 0.5}});
  PlotWarnings w;
  const auto table = emit_plot_data({dir.path()}, &w);
  ASSERT_EQ(w.messages.size(), 1u);
  EXPECT_NE(w.messages[0].find("coarsest"), std::string::npos);
  EXPECT_EQ(table,
            "algorithm,step,mean,std\n"
            "DIPPER,200,0.35,0.15\n"
            "DIPPER,400,0.55,0.15\n"
            "FLAT,200,0,0\n"
            "FLAT,400,0.5,0\n");
}

TEST(PlotData, SweepPointsAreNamedByParameter) {
  dipper::testing::TempDir dir("plot3");
  write_metrics(dir.path() / "sweep" / "lambda_0.1" / "DIPPER" / "seed_0", 0, {{100, 0.5}});
  write_metrics(dir.path() / "sweep" / "lambda_1" / "DIPPER" / "seed_0", 0, {{100, 0.25}});
  const auto table = emit_plot_data({dir.path()});
  EXPECT_EQ(table, "algorithm,step,mean,std\nlambda_0.1,100,0.5,0\nlambda_1,100,0.25,0\n");
}

TEST(PlotData, EmptyDirectoryIsAnError) {
  dipper::testing::TempDir dir("plot4");
  EXPECT_THROW(emit_plot_data({dir.path()}), IoError);
  EXPECT_THROW(emit_plot_data({dir.path() / "missing"}), IoError);
}

// --- experiments -----------------------------------------------------------

TEST(Experiment, WritesPerSeedFilesAndAggregate) {
  dipper::testing::TempDir dir("exp");
  const auto c = tiny_experiment(dir.path() / "out");
  const auto outcome = run_experiment(c);
  ASSERT_TRUE(outcome.ok());
  const fs::path root = dir.path() / "out" / "DIPPER";
  EXPECT_EQ(outcome.dir, root);
  for (const char* seed : {"seed_0", "seed_1"}) {
    const auto rows = read_metrics_csv(root / seed / "metrics.csv");
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].step, 300);
    EXPECT_EQ(rows[1].step, 600);
    EXPECT_TRUE(fs::exists(root / seed / "preferences.jsonl"));
    EXPECT_TRUE(fs::exists(root / seed / "preferences.jsonl.layouts.json"));
    EXPECT_TRUE(fs::exists(root / seed / "checkpoints"));
  }
  EXPECT_EQ(slurp(root / "aggregate.csv").substr(0, 16), "step,mean,std,n\n");
  const auto snap = json::parse(slurp(root / "config.json"));
  EXPECT_EQ(config_to_json(config_from_json(snap)), config_to_json(c));
}

TEST(Experiment, RerunIsByteIdentical) {
  dipper::testing::TempDir dir("exp_det");
  auto c = tiny_experiment(dir.path() / "a");
  c.seeds = {5};
  run_experiment(c);
  c.out_dir = (dir.path() / "b").string();
  run_experiment(c);
  for (const char* f : {"seed_5/metrics.csv", "aggregate.csv", "seed_5/preferences.jsonl"}) {
    EXPECT_EQ(slurp(dir.path() / "a" / "DIPPER" / f), slurp(dir.path() / "b" / "DIPPER" / f)) << f;
  }
}

TEST(Experiment, FailingSeedKeepsOtherResults) {
  dipper::testing::TempDir dir("exp_fail");
  auto c = tiny_experiment(dir.path() / "out");
  c.seeds = {0, 1, 2};
  int calls = 0;
  RunOptions o;
  o.on_seed_store = [&](pref::PreferenceStore* s) {
    if (s && ++calls == 2) throw std::runtime_error("injected failure");
  };
  const auto outcome = run_experiment(c, o);
  EXPECT_FALSE(outcome.ok());
  ASSERT_EQ(outcome.seeds.size(), 3u);
  EXPECT_TRUE(outcome.seeds[0].ok);
  EXPECT_FALSE(outcome.seeds[1].ok);
  EXPECT_EQ(outcome.seeds[1].error, "injected failure");
  EXPECT_TRUE(outcome.seeds[2].ok);
  EXPECT_EQ(read_metrics_csv(outcome.dir / "seed_2" / "metrics.csv").size(), 2u);
  ASSERT_FALSE(outcome.aggregate.empty());
  EXPECT_EQ(outcome.aggregate.back().n, 2);
}

TEST(Experiment, SweepWritesOnePointPerValue) {
  dipper::testing::TempDir dir("sweep");
  auto c = tiny_experiment(dir.path());
  c.seeds = {0};
  c.algo.total_steps = 300;
  c.sweep.lambda = {0.01, 1.0};
  const auto outs = run_sweep(c);
  ASSERT_EQ(outs.size(), 2u);
  EXPECT_TRUE(fs::exists(dir.path() / "sweep" / "lambda_0.01" / "DIPPER" / "seed_0" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(dir.path() / "sweep" / "lambda_1" / "DIPPER" / "seed_0" / "metrics.csv"));
  const auto snap = json::parse(slurp(dir.path() / "sweep" / "lambda_1" / "DIPPER" / "config.json"));
  EXPECT_EQ(snap["algorithm"]["lambda"].get<double>(), 1.0);
  c.sweep = {};
  EXPECT_THROW(run_sweep(c), ConfigError);
}

// --- label service ---------------------------------------------------------

class LabelService : public ::testing::Test {
 protected:
  void SetUp() override {
    store.register_layout(layout);
    port = server.start("127.0.0.1", 0);
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_connection_timeout(5);
    return c;
  }
  env::MazeLayout layout = env::generate_maze(2, 11, 10);
  pref::PreferenceStore store;
  LabelServer server{&store};
  int port = 0;
};

TEST_F(LabelService, EmptyQueue) {
  auto c = client();
  const auto res = c.Get("/api/pairs/next");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body), (json{{"empty", true}}));
  const auto st = c.Get("/api/status");
  ASSERT_TRUE(st);
  EXPECT_EQ(json::parse(st->body), (json{{"pending", 0}, {"labeled", 0}, {"training_step", 0}}));
}

TEST_F(LabelService, ServesPendingPairWithLayout) {
  const auto id = store.add(sample_pair(layout));
  store.set_training_step(1234);
  auto c = client();
  const auto res = c.Get("/api/pairs/next");
  ASSERT_TRUE(res);
  const auto j = json::parse(res->body);
  EXPECT_EQ(j["pair_id"], id);
  EXPECT_EQ(j["end_goal"], (json{1.0, 1.0}));
  EXPECT_EQ(env::layout_from_json(j["layout"]).walls, layout.walls);
  EXPECT_EQ(j["rollout1"]["steps"].size(), 1u);
  EXPECT_EQ(j["rollout2"]["achieved"].size(), 2u);
  const auto st = json::parse(c.Get("/api/status")->body);
  EXPECT_EQ(st, (json{{"pending", 1}, {"labeled", 0}, {"training_step", 1234}}));
}

TEST_F(LabelService, LabelOnceThenRejected) {
  const auto id = store.add(sample_pair(layout));
  auto c = client();
  const std::string path = "/api/pairs/" + std::to_string(id) + "/label";
  const auto ok = c.Post(path, R"({"y":[0,1]})", "application/json");
  ASSERT_TRUE(ok);
  EXPECT_EQ(ok->status, 200);
  EXPECT_EQ(json::parse(ok->body), (json{{"ok", true}}));
  EXPECT_EQ(store.get(id)->y, (pref::Label{0.0, 1.0}));
  EXPECT_EQ(store.get(id)->source, pref::LabelSource::Human);
  const auto again = c.Post(path, R"({"y":[1,0]})", "application/json");
  ASSERT_TRUE(again);
  EXPECT_EQ(again->status, 409);
  EXPECT_EQ(store.get(id)->y, (pref::Label{0.0, 1.0}));
  EXPECT_EQ(json::parse(c.Get("/api/pairs/next")->body), (json{{"empty", true}}));
}

TEST_F(LabelService, MalformedBodiesAre422AndPairStaysPending) {
  const auto id = store.add(sample_pair(layout));
  auto c = client();
  const std::string path = "/api/pairs/" + std::to_string(id) + "/label";
  for (const char* body : {"", "not json", R"({"y":[1]})", R"({"y":[0.3,0.7]})", R"({"y":"left"})",
                           R"({"label":[1,0]})", R"({"y":[1,0],"extra":1})", R"([1,0])", R"({"y":[true,false]})"}) {
    const auto res = c.Post(path, body, "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 422) << body;
  }
  EXPECT_EQ(store.pending_count(), 1u);
  const auto tie = c.Post(path, R"({"y":[0.5,0.5]})", "application/json");
  EXPECT_EQ(tie->status, 200);
}

TEST_F(LabelService, UnknownPairIs404) {
  auto c = client();
  const auto res = c.Post("/api/pairs/99/label", R"({"y":[1,0]})", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);
}

TEST_F(LabelService, TwoClientsRaceAndFirstWins) {
  for (int round = 0; round < 20; ++round) {
    const auto id = store.add(sample_pair(layout));
    const std::string path = "/api/pairs/" + std::to_string(id) + "/label";
    std::atomic<int> ok{0}, conflict{0};
    std::vector<std::thread> clients;
    for (int k = 0; k < 2; ++k) {
      clients.emplace_back([&, k] {
        auto c = client();
        const auto res = c.Post(path, k == 0 ? R"({"y":[1,0]})" : R"({"y":[0,1]})", "application/json");
        if (res && res->status == 200) ++ok;
        if (res && res->status == 409) ++conflict;
      });
    }
    for (auto& t : clients) t.join();
    EXPECT_EQ(ok.load(), 1);
    EXPECT_EQ(conflict.load(), 1);
  }
  EXPECT_EQ(store.labeled_count(), 20u);
}

TEST_F(LabelService, DetachedStoreReadsAsEmpty) {
  store.add(sample_pair(layout));
  server.set_store(nullptr);
  auto c = client();
  EXPECT_EQ(json::parse(c.Get("/api/pairs/next")->body), (json{{"empty", true}}));
  EXPECT_EQ(c.Post("/api/pairs/0/label", R"({"y":[1,0]})", "application/json")->status, 404);
  server.set_store(&store);
  EXPECT_EQ(json::parse(c.Get("/api/pairs/next")->body)["pair_id"], 0);
}

TEST_F(LabelService, BusyPortIsAStartupError) {
  LabelServer other(&store);
  EXPECT_THROW(other.start("127.0.0.1", port), ConfigError);
}

TEST(LabelServiceFile, PostedLabelIsOnDiskBeforeAcknowledgement) {
  dipper::testing::TempDir dir("serve_file");
  const auto path = dir.path() / "prefs.jsonl";
  const auto layout = env::generate_maze(4, 11, 10);
  pref::PreferenceStore store(path);
  store.register_layout(layout);
  const auto id = store.add(sample_pair(layout));
  LabelServer server(&store);
  const int port = server.start("127.0.0.1", 0);
  httplib::Client c("127.0.0.1", port);
  const auto res = c.Post("/api/pairs/" + std::to_string(id) + "/label", R"({"y":[1,0]})", "application/json");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  pref::PreferenceStore reread(path, pref::PreferenceStore::Open::Resume);
  EXPECT_EQ(reread.get(id)->y, (pref::Label{1.0, 0.0}));
  EXPECT_EQ(reread.get(id)->source, pref::LabelSource::Human);
}
