#include "dipper/features.hpp"

namespace dipper::env {

namespace {

double norm_x(const MazeLayout& m, double x) { return 2.0 * x / (m.width - 1) - 1.0; }
double norm_y(const MazeLayout& m, double y) { return 2.0 * y / (m.height - 1) - 1.0; }

void append_maze(const MazeLayout& m, std::vector<double>& out) {
  for (auto w : m.walls) out.push_back(w ? 1.0 : 0.0);
}

void append_neighbors(const MazeLayout& m, const Point& p, std::vector<double>& out) {
  auto [x, y] = cell_of(p);
  out.push_back(m.is_free(x, y - 1) ? 0.0 : 1.0);
  out.push_back(m.is_free(x, y + 1) ? 0.0 : 1.0);
  out.push_back(m.is_free(x - 1, y) ? 0.0 : 1.0);
  out.push_back(m.is_free(x + 1, y) ? 0.0 : 1.0);
}

}  // namespace

std::vector<double> lower_features(const EnvState& state, const Goal& goal, const FeatureOptions& opts) {
  const MazeLayout& m = *state.layout;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(lower_feature_dim(m, opts)));
  out.push_back(norm_x(m, state.position.x));
  out.push_back(norm_y(m, state.position.y));
  if (opts.include_maze) append_maze(m, out);
  out.push_back(norm_x(m, goal.x));
  out.push_back(norm_y(m, goal.y));
  if (opts.include_relative) {
    out.push_back(2.0 * (goal.x - state.position.x) / (m.width - 1));
    out.push_back(2.0 * (goal.y - state.position.y) / (m.height - 1));
  }
  if (opts.include_neighbors) append_neighbors(m, state.position, out);
  return out;
}

int lower_feature_dim(const MazeLayout& layout, const FeatureOptions& opts) {
  return 4 + (opts.include_maze ? layout.cell_count() : 0) + (opts.include_relative ? 2 : 0) +
         (opts.include_neighbors ? 4 : 0);
}

std::vector<double> higher_features(const EnvState& state, const std::optional<Goal>& end_goal,
                                    const FeatureOptions& opts) {
  const MazeLayout& m = *state.layout;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(higher_feature_dim(m, end_goal.has_value(), opts)));
  out.push_back(norm_x(m, state.position.x));
  out.push_back(norm_y(m, state.position.y));
  if (opts.include_maze) append_maze(m, out);
  if (opts.include_neighbors) append_neighbors(m, state.position, out);
  if (end_goal) {
    out.push_back(norm_x(m, end_goal->x));
    out.push_back(norm_y(m, end_goal->y));
  }
  return out;
}

int higher_feature_dim(const MazeLayout& layout, bool with_end_goal, const FeatureOptions& opts) {
  return 2 + (opts.include_maze ? layout.cell_count() : 0) + (opts.include_neighbors ? 4 : 0) +
         (with_end_goal ? 2 : 0);
}

std::vector<double> free_cell_mask(const MazeLayout& layout) {
  std::vector<double> mask(layout.walls.size());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = layout.walls[i] ? 0.0 : 1.0;
  return mask;
}

}  // namespace dipper::env
