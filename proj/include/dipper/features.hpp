#pragma once

#include <optional>
#include <vector>

#include "dipper/env.hpp"

namespace dipper::env {

// Observation encoding shared by every learned component. The base encoding
// follows the maze observation [p, M, g]; the relative offset and the four
// neighbour-wall bits are optional egocentric extras.
struct FeatureOptions {
  bool include_maze = true;
  bool include_relative = true;
  bool include_neighbors = true;
};

// Input for goal-conditioned controllers: [p, M, g, (g - p), walls around p].
std::vector<double> lower_features(const EnvState& state, const Goal& goal, const FeatureOptions& opts);
int lower_feature_dim(const MazeLayout& layout, const FeatureOptions& opts);

// Input for the subgoal policy: [p, M, walls around p] plus the end goal when
// the policy is goal-conditioned.
std::vector<double> higher_features(const EnvState& state, const std::optional<Goal>& end_goal,
                                    const FeatureOptions& opts);
int higher_feature_dim(const MazeLayout& layout, bool with_end_goal, const FeatureOptions& opts);

// Subgoal validity mask over cells (1 = free cell).
std::vector<double> free_cell_mask(const MazeLayout& layout);

}  // namespace dipper::env
