#pragma once

#include <span>
#include <vector>

#include "json.hpp"

#include "dipper/env.hpp"
#include "dipper/rng.hpp"

namespace dipper::oracle {

// [state][goal] tables.
using Table = std::vector<std::vector<double>>;

// Finite discounted MDP; transitions are stored flat as [s][a][s'].
struct FiniteMdp {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> transitions;
  std::vector<double> rewards;  // [s][a]
  double gamma = 0.95;

  double p(int s, int a, int next) const {
    return transitions[(static_cast<std::size_t>(s) * n_actions + a) * n_states + next];
  }
  double& p(int s, int a, int next) {
    return transitions[(static_cast<std::size_t>(s) * n_actions + a) * n_states + next];
  }
  double r(int s, int a) const { return rewards[static_cast<std::size_t>(s) * n_actions + a]; }
  double& r(int s, int a) { return rewards[static_cast<std::size_t>(s) * n_actions + a]; }

  static FiniteMdp zeros(int n_states, int n_actions, double gamma);
  // Throws ValidationError when a transition row is not a distribution
  // (tolerance 1e-12) or gamma is outside [0, 1).
  void validate() const;
};

// Higher-level instance: goals act as actions, P is the k-step closed-loop
// dynamics of a fixed lower policy, r_phi the preference reward and
// V_L <= V*_L the lower-level value tables.
struct GoalMdp {
  int n_states = 0;
  int n_goals = 0;
  std::vector<double> transitions;  // [s][g][s']
  Table reward;
  Table lower_value;
  Table lower_value_opt;
  double gamma_hi = 0.95;

  FiniteMdp as_finite_mdp() const;
  // Stochastic rows plus V_L <= V*_L everywhere.
  void validate() const;
  // (V_L - V*_L)(s, g)
  double gap(int s, int g) const { return lower_value[s][g] - lower_value_opt[s][g]; }
};

struct TabularPolicy {
  Table probs;

  int n_states() const { return static_cast<int>(probs.size()); }
  // Each row non-negative and summing to 1 within 1e-12.
  void validate() const;
  static TabularPolicy uniform(int n_states, int n_actions);
};

// --- dynamic programming ------------------------------------------------

double bellman_residual(const FiniteMdp& mdp, std::span<const double> values);
// Iterates the Bellman optimality operator until the residual is below tol.
std::vector<double> value_iteration(const FiniteMdp& mdp, double tol, int max_iters = 1000000);
std::vector<double> value_iteration(const GoalMdp& mdp, double tol);

// Soft backup V(s) = w * log sum_a exp((r + gamma P V) / w); w = 0 falls back
// to the hard max.
double soft_bellman_residual(const FiniteMdp& mdp, double entropy_weight, std::span<const double> values);
std::vector<double> soft_value_iteration(const FiniteMdp& mdp, double entropy_weight, double tol,
                                         int max_iters = 1000000);

// Soft Q-values r + gamma P V for a soft value table.
std::vector<double> soft_q_values(const FiniteMdp& mdp, std::span<const double> values);

// Exact evaluation (I - gamma P_pi) V = R_pi by LU solve.
std::vector<double> policy_evaluation(const FiniteMdp& mdp, const TabularPolicy& policy);

// --- KL-regularised higher-level optimum --------------------------------

// Primitive-enabled reference: softmax over goals of m * (V_L - V*_L).
TabularPolicy primitive_reference(const GoalMdp& mdp, double m);
// log sum_g exp(m * (V_L - V*_L)(s, g))
double log_reference_partition(const GoalMdp& mdp, int s, double m);

// pi_U(g|s) proportional to exp((r_phi + lambda (V_L - V*_L)) / alpha).
TabularPolicy closed_form_pi_u(const GoalMdp& mdp, double alpha, double lambda);

struct BruteForceResult {
  TabularPolicy policy;
  double residual = 0.0;  // max first-order stationarity violation
  int iterations = 0;
  bool converged = false;
};

// Per-state exponentiated-gradient ascent on
//   sum_g pi(g|s) r_phi(s,g) - alpha KL(pi(.|s) || reference(.|s)).
// step <= 0 selects 0.5 / alpha.
BruteForceResult brute_force_optimum(const GoalMdp& mdp, double alpha, const TabularPolicy& reference, int iters,
                                     double tolerance = 1e-8, double step = 0.0);

// Uniform-state average of E_pi[r_phi] - alpha KL(pi || reference). Returns
// -infinity when pi puts mass where the reference has none.
double kl_objective(const GoalMdp& mdp, const TabularPolicy& pi_u, const TabularPolicy& reference, double alpha);

// Uniform-state average of E_pi[r_phi + lambda (V_L - V*_L) - alpha log pi -
// alpha log Z_ref], i.e. the substituted objective with the m-hat term kept.
double substituted_objective(const GoalMdp& mdp, const TabularPolicy& pi_u, double alpha, double lambda);

double total_variation(std::span<const double> p, std::span<const double> q);
// max over states of the per-state total variation
double max_total_variation(const TabularPolicy& a, const TabularPolicy& b);

// --- instances ------------------------------------------------------------

// Random instance: Dirichlet-like transition rows, r_phi in [-1, 1], V*_L in
// [-1/(1-gamma), 0] and V_L = V*_L - U(0, gap_scale).
GoalMdp random_goal_mdp(int n_states, int n_goals, Rng& rng, double gap_scale = 3.0);

// Random stochastic policy with strictly positive rows.
TabularPolicy random_policy(int n_states, int n_actions, Rng& rng, double concentration = 1.0);

// Maze instance over free cells: V*_L from shortest paths, V_L and the
// k-step dynamics from a lower policy that follows a shortest path except
// for a uniformly random move with probability `noise`. r_phi is minus the
// expected shortest-path distance to `end_goal` after the k-step transition.
GoalMdp goal_mdp_from_maze(const env::MazeLayout& layout, int k, double gamma, double noise, int end_goal_cell);

// Lower-level MDP over free cells for reaching goal_cell with reward
// -1{s' != goal}; the goal is absorbing with zero reward.
FiniteMdp lower_goal_mdp(const env::MazeLayout& layout, int goal_cell, double gamma);

nlohmann::json to_json(const GoalMdp& mdp);
GoalMdp goal_mdp_from_json(const nlohmann::json& j);

}  // namespace dipper::oracle
