#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "dipper/errors.hpp"
#include "dipper/tabular_oracle.hpp"

namespace dipper::oracle {

namespace {

constexpr double kRowTolerance = 1e-12;

double log_sum_exp(std::span<const double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  if (std::isinf(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

std::vector<double> softmax(std::span<const double> v) {
  const double lse = log_sum_exp(v);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::exp(v[i] - lse);
  return out;
}

std::vector<double> q_row(const FiniteMdp& mdp, int s, std::span<const double> values) {
  std::vector<double> q(static_cast<std::size_t>(mdp.n_actions));
  for (int a = 0; a < mdp.n_actions; ++a) {
    double ev = 0.0;
    for (int n = 0; n < mdp.n_states; ++n) ev += mdp.p(s, a, n) * values[static_cast<std::size_t>(n)];
    q[static_cast<std::size_t>(a)] = mdp.r(s, a) + mdp.gamma * ev;
  }
  return q;
}

double soft_backup(std::span<const double> q, double w) {
  if (w == 0.0) return *std::max_element(q.begin(), q.end());
  std::vector<double> scaled(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) scaled[i] = q[i] / w;
  return w * log_sum_exp(scaled);
}

}  // namespace

FiniteMdp FiniteMdp::zeros(int n_states, int n_actions, double gamma) {
  FiniteMdp m;
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.gamma = gamma;
  m.transitions.assign(static_cast<std::size_t>(n_states) * n_actions * n_states, 0.0);
  m.rewards.assign(static_cast<std::size_t>(n_states) * n_actions, 0.0);
  return m;
}

void FiniteMdp::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("discount must lie in [0, 1)");
  if (transitions.size() != static_cast<std::size_t>(n_states) * n_actions * n_states ||
      rewards.size() != static_cast<std::size_t>(n_states) * n_actions) {
    throw ValidationError("MDP table sizes do not match its dimensions");
  }
  for (int s = 0; s < n_states; ++s) {
    for (int a = 0; a < n_actions; ++a) {
      double sum = 0.0;
      for (int n = 0; n < n_states; ++n) {
        if (p(s, a, n) < 0.0) throw ValidationError("negative transition probability");
        sum += p(s, a, n);
      }
      if (std::abs(sum - 1.0) > kRowTolerance) {
        throw ValidationError("transition row (" + std::to_string(s) + ", " + std::to_string(a) + ") sums to " +
                              std::to_string(sum));
      }
    }
  }
}

FiniteMdp GoalMdp::as_finite_mdp() const {
  FiniteMdp m;
  m.n_states = n_states;
  m.n_actions = n_goals;
  m.transitions = transitions;
  m.gamma = gamma_hi;
  m.rewards.reserve(static_cast<std::size_t>(n_states) * n_goals);
  for (const auto& row : reward) m.rewards.insert(m.rewards.end(), row.begin(), row.end());
  return m;
}

void GoalMdp::validate() const {
  as_finite_mdp().validate();
  for (int s = 0; s < n_states; ++s) {
    for (int g = 0; g < n_goals; ++g) {
      if (lower_value[s][g] > lower_value_opt[s][g]) {
        throw ValidationError("V_L exceeds V*_L at (" + std::to_string(s) + ", " + std::to_string(g) + ")");
      }
    }
  }
}

void TabularPolicy::validate() const {
  for (const auto& row : probs) {
    double sum = 0.0;
    for (double p : row) {
      if (p < 0.0) throw ValidationError("negative policy probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > kRowTolerance) throw ValidationError("policy row sums to " + std::to_string(sum));
  }
}

TabularPolicy TabularPolicy::uniform(int n_states, int n_actions) {
  TabularPolicy p;
  p.probs.assign(static_cast<std::size_t>(n_states),
                 std::vector<double>(static_cast<std::size_t>(n_actions), 1.0 / n_actions));
  return p;
}

double bellman_residual(const FiniteMdp& mdp, std::span<const double> values) {
  double worst = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    const auto q = q_row(mdp, s, values);
    worst = std::max(worst, std::abs(*std::max_element(q.begin(), q.end()) - values[static_cast<std::size_t>(s)]));
  }
  return worst;
}

std::vector<double> value_iteration(const FiniteMdp& mdp, double tol, int max_iters) {
  return soft_value_iteration(mdp, 0.0, tol, max_iters);
}

std::vector<double> value_iteration(const GoalMdp& mdp, double tol) {
  return value_iteration(mdp.as_finite_mdp(), tol);
}

double soft_bellman_residual(const FiniteMdp& mdp, double entropy_weight, std::span<const double> values) {
  double worst = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    const auto q = q_row(mdp, s, values);
    worst = std::max(worst, std::abs(soft_backup(q, entropy_weight) - values[static_cast<std::size_t>(s)]));
  }
  return worst;
}

std::vector<double> soft_value_iteration(const FiniteMdp& mdp, double entropy_weight, double tol, int max_iters) {
  if (!(tol > 0.0)) throw ArgumentError("value iteration tolerance must be positive");
  if (entropy_weight < 0.0) throw ArgumentError("entropy weight must be non-negative");
  mdp.validate();
  std::vector<double> v(static_cast<std::size_t>(mdp.n_states), 0.0), next(v.size());
  for (int it = 0; it < max_iters; ++it) {
    double delta = 0.0;
    for (int s = 0; s < mdp.n_states; ++s) {
      next[static_cast<std::size_t>(s)] = soft_backup(q_row(mdp, s, v), entropy_weight);
      delta = std::max(delta, std::abs(next[static_cast<std::size_t>(s)] - v[static_cast<std::size_t>(s)]));
    }
    v.swap(next);
    // contraction: residual of the new iterate is at most gamma * delta
    if (mdp.gamma * delta < tol) break;
  }
  return v;
}

std::vector<double> soft_q_values(const FiniteMdp& mdp, std::span<const double> values) {
  std::vector<double> q;
  for (int s = 0; s < mdp.n_states; ++s) {
    const auto row = q_row(mdp, s, values);
    q.insert(q.end(), row.begin(), row.end());
  }
  return q;
}

std::vector<double> policy_evaluation(const FiniteMdp& mdp, const TabularPolicy& policy) {
  mdp.validate();
  policy.validate();
  if (policy.n_states() != mdp.n_states) throw ShapeError("policy and MDP state counts differ");
  const int n = mdp.n_states;
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  for (int s = 0; s < n; ++s) {
    const auto& row = policy.probs[static_cast<std::size_t>(s)];
    if (static_cast<int>(row.size()) != mdp.n_actions) throw ShapeError("policy row width differs from action count");
    for (int act = 0; act < mdp.n_actions; ++act) {
      const double pa = row[static_cast<std::size_t>(act)];
      if (pa == 0.0) continue;
      b(s) += pa * mdp.r(s, act);
      for (int nx = 0; nx < n; ++nx) a(s, nx) -= mdp.gamma * pa * mdp.p(s, act, nx);
    }
  }
  const Eigen::VectorXd v = a.partialPivLu().solve(b);
  return {v.data(), v.data() + v.size()};
}

double log_reference_partition(const GoalMdp& mdp, int s, double m) {
  std::vector<double> e(static_cast<std::size_t>(mdp.n_goals));
  for (int g = 0; g < mdp.n_goals; ++g) e[static_cast<std::size_t>(g)] = m * mdp.gap(s, g);
  return log_sum_exp(e);
}

TabularPolicy primitive_reference(const GoalMdp& mdp, double m) {
  TabularPolicy p;
  for (int s = 0; s < mdp.n_states; ++s) {
    std::vector<double> e(static_cast<std::size_t>(mdp.n_goals));
    for (int g = 0; g < mdp.n_goals; ++g) e[static_cast<std::size_t>(g)] = m * mdp.gap(s, g);
    p.probs.push_back(softmax(e));
  }
  return p;
}

TabularPolicy closed_form_pi_u(const GoalMdp& mdp, double alpha, double lambda) {
  if (!(alpha > 0.0)) throw ArgumentError("closed-form optimum needs alpha > 0");
  TabularPolicy p;
  for (int s = 0; s < mdp.n_states; ++s) {
    std::vector<double> e(static_cast<std::size_t>(mdp.n_goals));
    for (int g = 0; g < mdp.n_goals; ++g) {
      e[static_cast<std::size_t>(g)] = (mdp.reward[s][g] + lambda * mdp.gap(s, g)) / alpha;
    }
    p.probs.push_back(softmax(e));
  }
  return p;
}

BruteForceResult brute_force_optimum(const GoalMdp& mdp, double alpha, const TabularPolicy& reference, int iters,
                                     double tolerance, double step) {
  if (!(alpha > 0.0)) throw ArgumentError("brute-force optimum needs alpha > 0");
  if (reference.n_states() != mdp.n_states) throw ShapeError("reference policy has the wrong number of states");
  for (const auto& row : reference.probs) {
    for (double p : row) {
      if (!(p > 0.0)) throw ArgumentError("reference rows must be strictly positive");
    }
  }
  if (step <= 0.0) step = 0.5 / alpha;
  BruteForceResult out;
  out.converged = true;
  const auto n_goals = static_cast<std::size_t>(mdp.n_goals);
  for (int s = 0; s < mdp.n_states; ++s) {
    const auto& ref = reference.probs[static_cast<std::size_t>(s)];
    std::vector<double> log_pi(n_goals);
    for (std::size_t g = 0; g < n_goals; ++g) log_pi[g] = std::log(ref[g]);
    std::vector<double> grad(n_goals), pi = ref;
    double residual = std::numeric_limits<double>::infinity();
    int it = 0;
    for (; it <= iters; ++it) {
      // d/dpi_g [sum pi r - alpha sum pi log(pi/ref)] = r_g - alpha (log(pi_g/ref_g) + 1)
      double mean_grad = 0.0;
      for (std::size_t g = 0; g < n_goals; ++g) {
        grad[g] = mdp.reward[s][g] - alpha * (log_pi[g] - std::log(ref[g]) + 1.0);
        mean_grad += pi[g] * grad[g];
      }
      residual = 0.0;
      for (std::size_t g = 0; g < n_goals; ++g) residual = std::max(residual, std::abs(grad[g] - mean_grad));
      if (residual < tolerance || it == iters) break;
      for (std::size_t g = 0; g < n_goals; ++g) log_pi[g] += step * grad[g];
      const double lse = log_sum_exp(log_pi);
      for (std::size_t g = 0; g < n_goals; ++g) {
        log_pi[g] -= lse;
        pi[g] = std::exp(log_pi[g]);
      }
    }
    out.policy.probs.push_back(pi);
    out.residual = std::max(out.residual, residual);
    out.iterations = std::max(out.iterations, it);
    if (!(residual < tolerance)) out.converged = false;
  }
  return out;
}

double kl_objective(const GoalMdp& mdp, const TabularPolicy& pi_u, const TabularPolicy& reference, double alpha) {
  double total = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    const auto& pi = pi_u.probs[static_cast<std::size_t>(s)];
    const auto& ref = reference.probs[static_cast<std::size_t>(s)];
    double expected = 0.0, kl = 0.0;
    for (int g = 0; g < mdp.n_goals; ++g) {
      const double p = pi[static_cast<std::size_t>(g)];
      if (p <= 0.0) continue;
      expected += p * mdp.reward[s][g];
      if (alpha == 0.0) continue;
      const double q = ref[static_cast<std::size_t>(g)];
      if (q <= 0.0) return -std::numeric_limits<double>::infinity();
      kl += p * (std::log(p) - std::log(q));
    }
    total += expected - alpha * kl;
  }
  return total / mdp.n_states;
}

double substituted_objective(const GoalMdp& mdp, const TabularPolicy& pi_u, double alpha, double lambda) {
  if (!(alpha > 0.0)) throw ArgumentError("the substituted objective needs alpha > 0 (m = lambda / alpha)");
  const double m = lambda / alpha;
  double total = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    const auto& pi = pi_u.probs[static_cast<std::size_t>(s)];
    const double log_z = log_reference_partition(mdp, s, m);
    double value = 0.0;
    for (int g = 0; g < mdp.n_goals; ++g) {
      const double p = pi[static_cast<std::size_t>(g)];
      if (p <= 0.0) continue;
      value += p * (mdp.reward[s][g] + lambda * mdp.gap(s, g) - alpha * std::log(p) - alpha * log_z);
    }
    total += value;
  }
  return total / mdp.n_states;
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("total_variation: size mismatch");
  double tv = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) tv += std::abs(p[i] - q[i]);
  return 0.5 * tv;
}

double max_total_variation(const TabularPolicy& a, const TabularPolicy& b) {
  if (a.probs.size() != b.probs.size()) throw ShapeError("policies differ in state count");
  double worst = 0.0;
  for (std::size_t s = 0; s < a.probs.size(); ++s) worst = std::max(worst, total_variation(a.probs[s], b.probs[s]));
  return worst;
}

TabularPolicy random_policy(int n_states, int n_actions, Rng& rng, double concentration) {
  std::gamma_distribution<double> gam(concentration, 1.0);
  TabularPolicy p;
  for (int s = 0; s < n_states; ++s) {
    std::vector<double> row(static_cast<std::size_t>(n_actions));
    double sum = 0.0;
    for (auto& x : row) {
      x = std::max(gam(rng), 1e-6);
      sum += x;
    }
    for (auto& x : row) x /= sum;
    p.probs.push_back(std::move(row));
  }
  return p;
}

GoalMdp random_goal_mdp(int n_states, int n_goals, Rng& rng, double gap_scale) {
  GoalMdp m;
  m.n_states = n_states;
  m.n_goals = n_goals;
  m.gamma_hi = 0.9;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  m.transitions.resize(static_cast<std::size_t>(n_states) * n_goals * n_states);
  for (int s = 0; s < n_states; ++s) {
    for (int g = 0; g < n_goals; ++g) {
      double* row = m.transitions.data() + (static_cast<std::size_t>(s) * n_goals + g) * n_states;
      double sum = 0.0;
      for (int n = 0; n < n_states; ++n) {
        row[n] = -std::log(1.0 - unit(rng));
        sum += row[n];
      }
      for (int n = 0; n < n_states; ++n) row[n] /= sum;
    }
  }
  const double vmax = 1.0 / (1.0 - 0.95);
  m.reward.assign(static_cast<std::size_t>(n_states), std::vector<double>(static_cast<std::size_t>(n_goals)));
  m.lower_value = m.reward;
  m.lower_value_opt = m.reward;
  for (int s = 0; s < n_states; ++s) {
    for (int g = 0; g < n_goals; ++g) {
      m.reward[s][g] = 2.0 * unit(rng) - 1.0;
      m.lower_value_opt[s][g] = -vmax * unit(rng);
      m.lower_value[s][g] = m.lower_value_opt[s][g] - gap_scale * unit(rng);
    }
  }
  return m;
}

namespace {

struct FreeCells {
  std::vector<int> cells;       // index -> cell
  std::vector<int> index_of;    // cell -> index or -1
};

FreeCells free_cell_index(const env::MazeLayout& layout) {
  FreeCells f;
  f.cells = layout.free_cells();
  f.index_of.assign(static_cast<std::size_t>(layout.cell_count()), -1);
  for (std::size_t i = 0; i < f.cells.size(); ++i) f.index_of[static_cast<std::size_t>(f.cells[i])] = static_cast<int>(i);
  return f;
}

int move_target(const env::MazeLayout& layout, int cell, int move) {
  const int x = cell % layout.width, y = cell / layout.width;
  int nx = x, ny = y;
  switch (move) {
    case 0: --ny; break;
    case 1: ++ny; break;
    case 2: --nx; break;
    case 3: ++nx; break;
    default: break;
  }
  return layout.is_free(nx, ny) ? layout.cell_index(nx, ny) : cell;
}

// Per-cell distribution over the five moves: shortest-path move with
// probability 1 - noise (lowest move index among ties), uniform otherwise.
std::vector<std::array<double, 5>> noisy_shortest_path_policy(const env::MazeLayout& layout, int goal_cell,
                                                              double noise) {
  const auto dist = env::bfs_distances(layout, goal_cell % layout.width, goal_cell / layout.width);
  std::vector<std::array<double, 5>> pol(static_cast<std::size_t>(layout.cell_count()));
  for (int c = 0; c < layout.cell_count(); ++c) {
    std::array<double, 5> row{};
    row.fill(noise / 5.0);
    int best = 4;
    int best_d = dist[static_cast<std::size_t>(c)];
    for (int mv = 0; mv < 4; ++mv) {
      const int t = move_target(layout, c, mv);
      const int d = dist[static_cast<std::size_t>(t)];
      if (d >= 0 && d < best_d) {
        best_d = d;
        best = mv;
      }
    }
    row[static_cast<std::size_t>(best)] += 1.0 - noise;
    pol[static_cast<std::size_t>(c)] = row;
  }
  return pol;
}

}  // namespace

FiniteMdp lower_goal_mdp(const env::MazeLayout& layout, int goal_cell, double gamma) {
  const FreeCells f = free_cell_index(layout);
  const int n = static_cast<int>(f.cells.size());
  FiniteMdp m = FiniteMdp::zeros(n, env::kMoveCount, gamma);
  const int goal = f.index_of[static_cast<std::size_t>(goal_cell)];
  if (goal < 0) throw ArgumentError("goal cell is a wall");
  for (int s = 0; s < n; ++s) {
    for (int a = 0; a < env::kMoveCount; ++a) {
      if (s == goal) {
        m.p(s, a, s) = 1.0;
        m.r(s, a) = 0.0;
        continue;
      }
      const int next = f.index_of[static_cast<std::size_t>(move_target(layout, f.cells[static_cast<std::size_t>(s)], a))];
      m.p(s, a, next) = 1.0;
      m.r(s, a) = next == goal ? 0.0 : -1.0;
    }
  }
  return m;
}

GoalMdp goal_mdp_from_maze(const env::MazeLayout& layout, int k, double gamma, double noise, int end_goal_cell) {
  const FreeCells f = free_cell_index(layout);
  const int n = static_cast<int>(f.cells.size());
  GoalMdp m;
  m.n_states = n;
  m.n_goals = n;
  m.gamma_hi = gamma;
  m.transitions.assign(static_cast<std::size_t>(n) * n * n, 0.0);
  m.reward.assign(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(n), 0.0));
  m.lower_value = m.reward;
  m.lower_value_opt = m.reward;
  const auto end_dist = env::bfs_distances(layout, end_goal_cell % layout.width, end_goal_cell / layout.width);

  for (int g = 0; g < n; ++g) {
    const int goal_cell = f.cells[static_cast<std::size_t>(g)];
    const FiniteMdp lower = lower_goal_mdp(layout, goal_cell, gamma);
    const auto pol = noisy_shortest_path_policy(layout, goal_cell, noise);
    TabularPolicy tp;
    for (int s = 0; s < n; ++s) {
      const auto& row = pol[static_cast<std::size_t>(f.cells[static_cast<std::size_t>(s)])];
      tp.probs.emplace_back(row.begin(), row.end());
    }
    const auto v_pi = policy_evaluation(lower, tp);
    const auto v_opt = value_iteration(lower, 1e-12);
    for (int s = 0; s < n; ++s) {
      m.lower_value[s][g] = v_pi[static_cast<std::size_t>(s)];
      m.lower_value_opt[s][g] = std::max(v_opt[static_cast<std::size_t>(s)], v_pi[static_cast<std::size_t>(s)]);
    }
    // k-step closed-loop distribution, goal absorbing
    for (int s = 0; s < n; ++s) {
      std::vector<double> dist(static_cast<std::size_t>(n), 0.0);
      dist[static_cast<std::size_t>(s)] = 1.0;
      for (int step = 0; step < k; ++step) {
        std::vector<double> nd(dist.size(), 0.0);
        for (int c = 0; c < n; ++c) {
          const double pc = dist[static_cast<std::size_t>(c)];
          if (pc == 0.0) continue;
          for (int a = 0; a < env::kMoveCount; ++a) {
            const double pa = tp.probs[static_cast<std::size_t>(c)][static_cast<std::size_t>(a)];
            for (int nx = 0; nx < n; ++nx) nd[static_cast<std::size_t>(nx)] += pc * pa * lower.p(c, a, nx);
          }
        }
        dist.swap(nd);
      }
      const double total = std::accumulate(dist.begin(), dist.end(), 0.0);
      double expected_distance = 0.0;
      for (int nx = 0; nx < n; ++nx) {
        dist[static_cast<std::size_t>(nx)] /= total;
        m.transitions[(static_cast<std::size_t>(s) * n + g) * n + nx] = dist[static_cast<std::size_t>(nx)];
        expected_distance +=
            dist[static_cast<std::size_t>(nx)] * end_dist[static_cast<std::size_t>(f.cells[static_cast<std::size_t>(nx)])];
      }
      m.reward[s][g] = -expected_distance;
    }
  }
  return m;
}

nlohmann::json to_json(const GoalMdp& mdp) {
  return {{"n_states", mdp.n_states},       {"n_goals", mdp.n_goals},
          {"gamma_hi", mdp.gamma_hi},       {"transitions", mdp.transitions},
          {"reward", mdp.reward},           {"lower_value", mdp.lower_value},
          {"lower_value_opt", mdp.lower_value_opt}};
}

GoalMdp goal_mdp_from_json(const nlohmann::json& j) {
  GoalMdp m;
  m.n_states = j.at("n_states").get<int>();
  m.n_goals = j.at("n_goals").get<int>();
  m.gamma_hi = j.at("gamma_hi").get<double>();
  m.transitions = j.at("transitions").get<std::vector<double>>();
  m.reward = j.at("reward").get<Table>();
  m.lower_value = j.at("lower_value").get<Table>();
  m.lower_value_opt = j.at("lower_value_opt").get<Table>();
  m.validate();
  return m;
}

}  // namespace dipper::oracle
