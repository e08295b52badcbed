#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "dipper/rng.hpp"

namespace dipper::env {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

double distance(const Point& a, const Point& b);

// Four-room maze on a W x H grid. One vertical wall at column wall_col and one
// horizontal wall at row wall_row, each split into two segments by the other
// wall; every segment has exactly one gate. Cells are indexed row-major,
// index = y * width + x. The grid border acts as a wall.
struct MazeLayout {
  int width = 0;
  int height = 0;
  int wall_col = 0;
  int wall_row = 0;
  // Gate cells in order: horizontal wall left segment, horizontal wall right
  // segment, vertical wall top segment, vertical wall bottom segment.
  std::array<int, 4> gates{};
  std::vector<std::uint8_t> walls;

  int cell_index(int x, int y) const { return y * width + x; }
  int cell_count() const { return width * height; }
  bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
  bool is_wall(int x, int y) const { return walls[static_cast<std::size_t>(cell_index(x, y))] != 0; }
  bool is_free(int x, int y) const { return in_bounds(x, y) && !is_wall(x, y); }

  // Room id in {0,1,2,3} (0 top-left, 1 top-right, 2 bottom-left, 3
  // bottom-right) or -1 for wall and gate cells.
  int room_of(int x, int y) const;
  std::vector<int> free_cells() const;

  // Stable 64-bit content hash, hex encoded.
  std::string hash() const;

  friend bool operator==(const MazeLayout&, const MazeLayout&) = default;
};

// Throws ConfigError when width or height is below 5.
MazeLayout generate_maze(std::uint64_t seed, int width, int height);

// Wall-free W x H room (no partitions, gates set to -1).
MazeLayout open_room(int width, int height);

// Number of free cells reachable from (x, y) by 4-connected moves.
int flood_fill_count(const MazeLayout& layout, int x, int y);
bool is_connected(const MazeLayout& layout);

// Breadth-first shortest-path distances (in moves) from a free cell to every
// cell; walls and unreachable cells get -1.
std::vector<int> bfs_distances(const MazeLayout& layout, int x, int y);

nlohmann::json layout_to_json(const MazeLayout& layout);
MazeLayout layout_from_json(const nlohmann::json& j);

enum class EnvKind { Discrete, Continuous };

enum class Move : int { Up = 0, Down = 1, Left = 2, Right = 3, Stay = 4 };
inline constexpr int kMoveCount = 5;

struct Offset {
  double dx = 0.0;
  double dy = 0.0;
};

using PrimitiveAction = std::variant<Move, Offset>;

struct EnvState {
  Point position;
  std::shared_ptr<const MazeLayout> layout;

  // Flattened wall occupancy, |M| = W * H.
  std::vector<double> maze_onehot() const;
};

using Goal = Point;

struct EnvConfig {
  EnvKind kind = EnvKind::Discrete;
  int width = 11;
  int height = 10;
  int subgoal_interval = 5;  // k
  int horizon = 50;          // T_max
  double epsilon = 0.5;
  double continuous_step_scale = 0.5;
};

class MazeEnv {
 public:
  explicit MazeEnv(EnvConfig config);

  const EnvConfig& config() const { return config_; }

  // Deterministic transition. Blocked moves leave the agent in place;
  // continuous moves are clipped at the first wall face per axis.
  EnvState step(const EnvState& state, const PrimitiveAction& action) const;

  // 0 when ||achieved - subgoal|| <= epsilon, -1 otherwise.
  double lower_reward(const EnvState& state, const Goal& subgoal) const;

  bool achieved(const Point& position, const Goal& goal) const;
  bool valid_position(const MazeLayout& layout, const Point& p) const;

 private:
  EnvState step_discrete(const EnvState& state, Move move) const;
  EnvState step_continuous(const EnvState& state, Offset offset) const;

  EnvConfig config_;
};

// Cell containing a continuous point (cells are unit squares centred on
// integer coordinates).
std::array<int, 2> cell_of(const Point& p);
Point cell_center(const MazeLayout& layout, int index);

struct EpisodeRecord {
  std::vector<EnvState> states;
  std::vector<PrimitiveAction> actions;
  std::vector<Goal> subgoals;  // one per primitive step
  Goal end_goal;
  std::vector<Point> achieved;  // achieved goal after each step
  bool success = false;
};

// True iff the final achieved position lies within epsilon of the end goal.
bool episode_success(const EpisodeRecord& record, const Goal& end_goal, double epsilon);

// Start/goal pair: the goal is a free cell in one room, the start a free cell
// in the diagonally opposite room.
struct Task {
  Point start;
  Goal goal;
};

Task sample_task(const MazeLayout& layout, Rng& rng);
Point sample_start_in_room(const MazeLayout& layout, int room, Rng& rng);

}  // namespace dipper::env
