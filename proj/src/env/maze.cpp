#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>

#include "dipper/env.hpp"
#include "dipper/errors.hpp"

namespace dipper::env {

double distance(const Point& a, const Point& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

int MazeLayout::room_of(int x, int y) const {
  if (!in_bounds(x, y) || x == wall_col || y == wall_row) return -1;
  return (y > wall_row ? 2 : 0) + (x > wall_col ? 1 : 0);
}

MazeLayout open_room(int width, int height) {
  if (width < 1 || height < 1) throw ConfigError("room dimensions must be positive");
  MazeLayout m;
  m.width = width;
  m.height = height;
  m.wall_col = -1;
  m.wall_row = -1;
  m.gates = {-1, -1, -1, -1};
  m.walls.assign(static_cast<std::size_t>(width * height), 0);
  return m;
}

std::vector<int> MazeLayout::free_cells() const {
  std::vector<int> out;
  for (int i = 0; i < cell_count(); ++i) {
    if (!walls[static_cast<std::size_t>(i)]) out.push_back(i);
  }
  return out;
}

std::string MazeLayout::hash() const {
  // FNV-1a over the defining integers and the occupancy grid.
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffu;
      h *= 1099511628211ull;
    }
  };
  mix(static_cast<std::uint64_t>(width));
  mix(static_cast<std::uint64_t>(height));
  mix(static_cast<std::uint64_t>(wall_col));
  mix(static_cast<std::uint64_t>(wall_row));
  for (int g : gates) mix(static_cast<std::uint64_t>(g));
  for (auto w : walls) mix(w);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

MazeLayout generate_maze(std::uint64_t seed, int width, int height) {
  if (width < 5 || height < 5) {
    throw ConfigError("maze must be at least 5x5 to host two walls and four gates, got " +
                      std::to_string(width) + "x" + std::to_string(height));
  }
  Rng rng = split_stream(seed, "maze");
  MazeLayout m;
  m.width = width;
  m.height = height;
  // Wall positions come from [1, W-2] / [1, H-2]; restricting to [2, W-3]
  // keeps both gate ranges [1, W_P-1] and [W_P+1, W-2] non-empty.
  m.wall_col = uniform_int(rng, 2, width - 3);
  m.wall_row = uniform_int(rng, 2, height - 3);
  const int gate_left = uniform_int(rng, 1, m.wall_col - 1);
  const int gate_right = uniform_int(rng, m.wall_col + 1, width - 2);
  const int gate_top = uniform_int(rng, 1, m.wall_row - 1);
  const int gate_bottom = uniform_int(rng, m.wall_row + 1, height - 2);

  m.walls.assign(static_cast<std::size_t>(width * height), 0);
  for (int y = 0; y < height; ++y) m.walls[static_cast<std::size_t>(m.cell_index(m.wall_col, y))] = 1;
  for (int x = 0; x < width; ++x) m.walls[static_cast<std::size_t>(m.cell_index(x, m.wall_row))] = 1;
  m.gates = {m.cell_index(gate_left, m.wall_row), m.cell_index(gate_right, m.wall_row),
             m.cell_index(m.wall_col, gate_top), m.cell_index(m.wall_col, gate_bottom)};
  for (int g : m.gates) m.walls[static_cast<std::size_t>(g)] = 0;
  return m;
}

std::vector<int> bfs_distances(const MazeLayout& layout, int x, int y) {
  std::vector<int> dist(static_cast<std::size_t>(layout.cell_count()), -1);
  if (!layout.is_free(x, y)) return dist;
  std::deque<std::array<int, 2>> queue;
  dist[static_cast<std::size_t>(layout.cell_index(x, y))] = 0;
  queue.push_back({x, y});
  constexpr int dx[4] = {0, 0, -1, 1};
  constexpr int dy[4] = {-1, 1, 0, 0};
  while (!queue.empty()) {
    auto [cx, cy] = queue.front();
    queue.pop_front();
    const int d = dist[static_cast<std::size_t>(layout.cell_index(cx, cy))];
    for (int k = 0; k < 4; ++k) {
      const int nx = cx + dx[k], ny = cy + dy[k];
      if (!layout.is_free(nx, ny)) continue;
      auto& slot = dist[static_cast<std::size_t>(layout.cell_index(nx, ny))];
      if (slot >= 0) continue;
      slot = d + 1;
      queue.push_back({nx, ny});
    }
  }
  return dist;
}

int flood_fill_count(const MazeLayout& layout, int x, int y) {
  const auto dist = bfs_distances(layout, x, y);
  return static_cast<int>(std::count_if(dist.begin(), dist.end(), [](int d) { return d >= 0; }));
}

bool is_connected(const MazeLayout& layout) {
  const auto free = layout.free_cells();
  if (free.empty()) return false;
  const int start = free.front();
  return flood_fill_count(layout, start % layout.width, start / layout.width) ==
         static_cast<int>(free.size());
}

nlohmann::json layout_to_json(const MazeLayout& layout) {
  nlohmann::json walls = nlohmann::json::array();
  for (auto w : layout.walls) walls.push_back(w != 0);
  return {{"W", layout.width},     {"H", layout.height}, {"W_P", layout.wall_col},
          {"H_P", layout.wall_row}, {"gates", layout.gates}, {"walls", walls}};
}

MazeLayout layout_from_json(const nlohmann::json& j) {
  MazeLayout m;
  m.width = j.at("W").get<int>();
  m.height = j.at("H").get<int>();
  m.wall_col = j.at("W_P").get<int>();
  m.wall_row = j.at("H_P").get<int>();
  m.gates = j.at("gates").get<std::array<int, 4>>();
  const auto& walls = j.at("walls");
  if (walls.size() != static_cast<std::size_t>(m.width * m.height)) {
    throw ShapeError("layout walls array has " + std::to_string(walls.size()) + " entries, expected " +
                     std::to_string(m.width * m.height));
  }
  m.walls.reserve(walls.size());
  for (const auto& w : walls) m.walls.push_back(w.get<bool>() ? 1 : 0);
  return m;
}

std::vector<double> EnvState::maze_onehot() const {
  std::vector<double> out(layout->walls.size());
  std::transform(layout->walls.begin(), layout->walls.end(), out.begin(),
                 [](std::uint8_t w) { return w ? 1.0 : 0.0; });
  return out;
}

std::array<int, 2> cell_of(const Point& p) {
  return {static_cast<int>(std::floor(p.x + 0.5)), static_cast<int>(std::floor(p.y + 0.5))};
}

Point cell_center(const MazeLayout& layout, int index) {
  return {static_cast<double>(index % layout.width), static_cast<double>(index / layout.width)};
}

MazeEnv::MazeEnv(EnvConfig config) : config_(config) {
  if (config_.subgoal_interval < 1) throw ConfigError("subgoal interval k must be >= 1");
  if (config_.horizon < 1) throw ConfigError("episode horizon must be >= 1");
  if (!(config_.epsilon > 0.0)) throw ConfigError("epsilon must be positive");
}

bool MazeEnv::valid_position(const MazeLayout& layout, const Point& p) const {
  auto [cx, cy] = cell_of(p);
  if (config_.kind == EnvKind::Discrete && (p.x != std::floor(p.x) || p.y != std::floor(p.y))) return false;
  return layout.is_free(cx, cy);
}

EnvState MazeEnv::step(const EnvState& state, const PrimitiveAction& action) const {
  if (const Move* mv = std::get_if<Move>(&action)) return step_discrete(state, *mv);
  return step_continuous(state, std::get<Offset>(action));
}

EnvState MazeEnv::step_discrete(const EnvState& state, Move move) const {
  auto [x, y] = cell_of(state.position);
  int nx = x, ny = y;
  switch (move) {
    case Move::Up: --ny; break;
    case Move::Down: ++ny; break;
    case Move::Left: --nx; break;
    case Move::Right: ++nx; break;
    case Move::Stay: break;
  }
  EnvState next = state;
  if (state.layout->is_free(nx, ny)) next.position = {static_cast<double>(nx), static_cast<double>(ny)};
  return next;
}

namespace {

// Moves one coordinate by delta (|delta| < 1) and stops at the face of the
// first blocked cell. `other` is the fixed cell index on the other axis.
double clip_axis(const MazeLayout& layout, double from, double delta, int other, bool x_axis) {
  constexpr double kFaceGap = 1e-9;
  const double to = from + delta;
  const int from_cell = static_cast<int>(std::floor(from + 0.5));
  const int to_cell = static_cast<int>(std::floor(to + 0.5));
  if (to_cell == from_cell) return to;
  const bool free = x_axis ? layout.is_free(to_cell, other) : layout.is_free(other, to_cell);
  if (free) return to;
  return delta > 0 ? from_cell + 0.5 - kFaceGap : from_cell - 0.5;
}

}  // namespace

EnvState MazeEnv::step_continuous(const EnvState& state, Offset offset) const {
  const double dx = std::clamp(offset.dx, -1.0, 1.0) * config_.continuous_step_scale;
  const double dy = std::clamp(offset.dy, -1.0, 1.0) * config_.continuous_step_scale;
  const MazeLayout& layout = *state.layout;
  EnvState next = state;
  auto cell = cell_of(next.position);
  next.position.x = clip_axis(layout, next.position.x, dx, cell[1], true);
  cell = cell_of(next.position);
  next.position.y = clip_axis(layout, next.position.y, dy, cell[0], false);
  return next;
}

bool MazeEnv::achieved(const Point& position, const Goal& goal) const {
  return !(distance(position, goal) > config_.epsilon);
}

double MazeEnv::lower_reward(const EnvState& state, const Goal& subgoal) const {
  return achieved(state.position, subgoal) ? 0.0 : -1.0;
}

bool episode_success(const EpisodeRecord& record, const Goal& end_goal, double epsilon) {
  if (record.achieved.empty()) return false;
  return !(distance(record.achieved.back(), end_goal) > epsilon);
}

Point sample_start_in_room(const MazeLayout& layout, int room, Rng& rng) {
  std::vector<int> cells;
  for (int idx : layout.free_cells()) {
    if (layout.room_of(idx % layout.width, idx / layout.width) == room) cells.push_back(idx);
  }
  if (cells.empty()) throw ConfigError("room " + std::to_string(room) + " has no free cells");
  const int pick = cells[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(cells.size()) - 1))];
  return cell_center(layout, pick);
}

Task sample_task(const MazeLayout& layout, Rng& rng) {
  const int goal_room = uniform_int(rng, 0, 3);
  Task t;
  t.goal = sample_start_in_room(layout, goal_room, rng);
  t.start = sample_start_in_room(layout, 3 - goal_room, rng);
  return t;
}

}  // namespace dipper::env
