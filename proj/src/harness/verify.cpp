#include <chrono>
#include <cmath>
#include <numbers>

#include "dipper/harness.hpp"
#include "dipper/rng.hpp"
#include "dipper/tabular_oracle.hpp"

namespace dipper::harness {

namespace {

using Clock = std::chrono::steady_clock;

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

pref::HighTrajectory random_trajectory(int n_states, int n_choices, int length, Rng& rng) {
  pref::HighTrajectory t;
  for (int i = 0; i < length; ++i) {
    pref::HighStep s;
    s.state_index = uniform_int(rng, 0, n_states - 1);
    s.choice = uniform_int(rng, 0, n_choices - 1);
    t.steps.push_back(s);
  }
  t.layout_hash = "verify";
  return t;
}

std::vector<pref::PreferencePair> random_pairs(int n, int n_states, int n_choices, int length, Rng& rng) {
  static const pref::Label kLabels[] = {{1.0, 0.0}, {0.0, 1.0}, {0.5, 0.5}};
  std::vector<pref::PreferencePair> out;
  for (int i = 0; i < n; ++i) {
    pref::PreferencePair p;
    p.pair_id = i;
    p.tau1 = random_trajectory(n_states, n_choices, length, rng);
    p.tau2 = random_trajectory(n_states, n_choices, length, rng);
    p.y = kLabels[uniform_int(rng, 0, 2)];
    out.push_back(std::move(p));
  }
  return out;
}

VerifyCheck objective_identity(Rng& rng) {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const auto mdp = oracle::random_goal_mdp(2 + inst % 9, 2 + inst % 5, rng);
    const double alpha = 0.05 + 2.0 * uniform01(rng);
    const double lambda = 2.0 * uniform01(rng);
    const auto ref = oracle::primitive_reference(mdp, lambda / alpha);
    for (int k = 0; k < 10; ++k) {
      const auto pi = oracle::random_policy(mdp.n_states, mdp.n_goals, rng);
      const double a = oracle::kl_objective(mdp, pi, ref, alpha);
      const double b = oracle::substituted_objective(mdp, pi, alpha, lambda);
      worst = std::max(worst, std::abs(a - b));
    }
  }
  const double secs = seconds_since(t0);
  return {"objective_identity", worst < 1e-9 && secs < 10.0,
          "max |diff| " + sci(worst) + " over 1000 policies in " + sci(secs) + " s"};
}

VerifyCheck closed_form_optimum(Rng& rng) {
  const auto t0 = Clock::now();
  double worst = 0.0;
  int ok = 0;
  const int instances = 20;
  for (int inst = 0; inst < instances; ++inst) {
    const auto mdp = oracle::random_goal_mdp(1 + uniform_int(rng, 0, 19), 2 + uniform_int(rng, 0, 3), rng);
    const double alpha = 0.2 + uniform01(rng);
    const double lambda = 2.0 * uniform01(rng);
    const auto res = oracle::brute_force_optimum(mdp, alpha, oracle::primitive_reference(mdp, lambda / alpha), 200000);
    const double tv = oracle::max_total_variation(res.policy, oracle::closed_form_pi_u(mdp, alpha, lambda));
    worst = std::max(worst, tv);
    if (tv < 1e-3) ++ok;
  }
  const double secs = seconds_since(t0);
  return {"closed_form_optimum", ok == instances && secs < 60.0,
          std::to_string(ok) + "/" + std::to_string(instances) + " instances, max TV " + sci(worst) + " in " +
              sci(secs) + " s"};
}

VerifyCheck zero_lambda_reduction(Rng& rng) {
  const int n_states = 6, n_choices = 4;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    core::TabularChoiceModel model(n_states, n_choices);
    for (auto& v : model.params()) v = 2.0 * uniform01(rng) - 1.0;
    const auto pairs = random_pairs(8, n_states, n_choices, 1 + trial % 5, rng);
    const double alpha = 0.1 + uniform01(rng);
    const core::StepOffset gap = [&](const pref::HighStep& s, const env::Goal&) {
      return -1.0 - s.state_index - 0.5 * s.choice;
    };
    const core::StepOffset vk = [&](const pref::HighStep& s, const env::Goal&) { return -2.0 * s.choice; };
    const core::StepOffset uniform_ref = [&](const pref::HighStep&, const env::Goal&) {
      return -std::log(static_cast<double>(n_choices));
    };
    const double full = core::dipper_loss_full(model, gap, pairs, alpha, 0.0).loss;
    const double practical = core::dipper_loss_practical(model, vk, pairs, alpha, 0.0).loss;
    const double flat = core::dpo_flat_loss(model, uniform_ref, pairs, alpha).loss;
    worst = std::max({worst, std::abs(full - practical), std::abs(full - flat)});
  }
  return {"zero_lambda_reduction", worst < 1e-12, "max |diff| " + sci(worst)};
}

VerifyCheck swap_antisymmetry(Rng& rng) {
  const int n_states = 5, n_choices = 3;
  bool exact = true;
  for (int trial = 0; trial < 20; ++trial) {
    core::TabularChoiceModel model(n_states, n_choices);
    for (auto& v : model.params()) v = 2.0 * uniform01(rng) - 1.0;
    auto pairs = random_pairs(6, n_states, n_choices, 1 + trial % 4, rng);
    auto swapped = pairs;
    for (auto& p : swapped) {
      std::swap(p.tau1, p.tau2);
      p.y = pref::Label{(*p.y)[1], (*p.y)[0]};
    }
    const core::StepOffset vk = [](const pref::HighStep& s, const env::Goal&) { return -0.25 * s.state_index; };
    const auto a = core::dipper_loss_practical(model, vk, pairs, 0.3, 0.7);
    const auto b = core::dipper_loss_practical(model, vk, swapped, 0.3, 0.7);
    if (a.loss != b.loss) exact = false;
    for (std::size_t i = 0; i < a.logits.size(); ++i) {
      if (a.logits[i] != -b.logits[i]) exact = false;
    }
  }
  return {"swap_antisymmetry", exact, exact ? "exact" : "swapped pairs differ"};
}

VerifyCheck bt_complementarity(Rng& rng) {
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double a = 40.0 * uniform01(rng) - 20.0, b = 40.0 * uniform01(rng) - 20.0;
    worst = std::max(worst, std::abs(pref::bt_probability(a, b) + pref::bt_probability(b, a) - 1.0));
  }
  return {"bt_complementarity", worst < 1e-12, "max |P12 + P21 - 1| " + sci(worst)};
}

VerifyCheck tie_loss(Rng& rng) {
  core::TabularChoiceModel model(4, 3);
  for (auto& v : model.params()) v = 2.0 * uniform01(rng) - 1.0;
  pref::PreferencePair p;
  p.tau1 = random_trajectory(4, 3, 3, rng);
  p.tau2 = p.tau1;
  p.y = pref::Label{0.5, 0.5};
  const std::vector<pref::PreferencePair> pairs{p};
  const double loss = core::dpo_flat_loss(model, [](const pref::HighStep&, const env::Goal&) { return -1.0; }, pairs,
                                          0.5)
                          .loss;
  const double err = std::abs(loss - std::numbers::ln2);
  return {"tie_loss_ln2", err < 1e-12, "|loss - ln2| " + sci(err)};
}

}  // namespace

std::vector<VerifyCheck> run_verify_suite(std::uint64_t seed) {
  Rng rng = split_stream(seed, "verify");
  std::vector<VerifyCheck> out;
  out.push_back(objective_identity(rng));
  out.push_back(closed_form_optimum(rng));
  out.push_back(zero_lambda_reduction(rng));
  out.push_back(swap_antisymmetry(rng));
  out.push_back(bt_complementarity(rng));
  out.push_back(tie_loss(rng));
  return out;
}

}  // namespace dipper::harness
