#pragma once

#include "sbr/common.hpp"
#include "sbr/dataset.hpp"
#include "sbr/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace sbr {

// Continuous 2-D point mass in a unit-cell grid maze. Cell (row, col) spans
// [col, col+1) x [row, row+1); grid value 1 blocks the cell. Observations are
// [x, y, vx, vy, noise...]: position, realized velocity of the last step
// (zero after reset, reduced by wall clamping), and noise dimensions that
// follow a seeded random walk ignoring both position and actions. Without
// the velocity channels state similarity cannot tell travel direction apart,
// which retrieval needs in corridor mazes.
struct PointMazeSpec {
  std::vector<std::vector<int>> grid;
  Eigen::Vector2d start{0.0, 0.0};  // start region center
  double start_radius = 0.0;        // half-width of the start box
  Eigen::Vector2d goal{0.0, 0.0};
  double tol = 0.2;
  double dt = 0.25;
  int horizon = 100;
  int noise_dims = 0;
  double noise_step = 0.25;

  Index rows() const { return static_cast<Index>(grid.size()); }
  Index cols() const { return grid.empty() ? 0 : static_cast<Index>(grid[0].size()); }
  Index obs_dim() const { return 4 + noise_dims; }

  bool cell_blocked(Index row, Index col) const;
  bool is_free(double x, double y) const;

  void validate() const;
};

// Layout files: JSON {"grid": [[0|1,...]], "start": [x,y], "goal": [x,y],
// "tol": t, "dt": d, "horizon": n} with optional "start_radius".
PointMazeSpec load_layout_file(const std::filesystem::path& path);
void save_layout_file(const PointMazeSpec& spec, const std::filesystem::path& path);

// Shipped layouts: "open" (easy), "umaze" (medium), "smaze" (hard).
PointMazeSpec builtin_layout(const std::string& name);
std::vector<std::string> builtin_layout_names();
// Name of a shipped layout, or a path to a layout JSON file.
PointMazeSpec resolve_layout(const std::string& name_or_path);

struct EnvState {
  Vector obs;  // [x, y, vx, vy, noise...]
  int step_count = 0;
};

struct StepResult {
  EnvState state;
  double reward = 0.0;
  bool done = false;
};

class PointMazeEnv {
 public:
  explicit PointMazeEnv(PointMazeSpec spec);

  const EnvState& reset(std::uint64_t seed);
  // Action is clipped to [-1,1]^2; movement is dt * action per axis, walls
  // project the motion onto the cell boundary. Reward 1 within goal
  // tolerance, else 0; done on goal or horizon.
  StepResult step(const Vector& action);

  const EnvState& state() const { return state_; }
  const PointMazeSpec& spec() const { return spec_; }

 private:
  PointMazeSpec spec_;
  EnvState state_;
  Rng rng_{0};
};

Vector clip_action(const Vector& action);

// Greedy descent on the BFS distance-to-target field; from inside the target
// cell it steers at the exact target point. Stateless per step, so it
// recovers from any free position.
class WaypointController {
 public:
  WaypointController(const PointMazeSpec& spec, const Eigen::Vector2d& target);

  Vector action(const Vector& obs) const;

  // Cells with no path to the target (used for validation).
  bool reachable(double x, double y) const;
  bool fully_reachable() const;  // every free cell can reach the target

 private:
  const PointMazeSpec spec_;
  Eigen::Vector2d target_;
  std::vector<std::vector<int>> dist_;  // -1 where unreachable
};

// Expert policy toward spec.goal; throws PlanningError if some free cell
// cannot reach the goal.
WaypointController scripted_expert(const PointMazeSpec& spec);

enum class GeneratorKind { Expert, WrongGoal, RandomWalk, EarlyFailure };

std::string to_string(GeneratorKind kind);
GeneratorKind generator_kind_from_string(const std::string& s);

struct GeneratorSpec {
  GeneratorKind kind = GeneratorKind::Expert;
  int count = 0;
  std::uint64_t seed = 0;
  Eigen::Vector2d alt_goal{0.0, 0.0};  // WrongGoal only
};

// Expert-kind trajectories land in the first dataset, everything else in the
// second. Trajectory ids are globally unique across the pair.
std::pair<Dataset, Dataset> generate_dataset(const PointMazeSpec& spec,
                                             const std::vector<GeneratorSpec>& generators);

// Mean undiscounted returns of the uniform-random policy and the scripted
// expert; the endpoints of the normalized score.
struct ReferenceReturns {
  double random_return = 0.0;
  double expert_return = 0.0;
};

ReferenceReturns reference_returns(const PointMazeSpec& spec, int episodes,
                                   std::uint64_t seed);

// Shared rollout engine used by evaluation and data generation. The factory
// is called once per episode so stateful policies can reseed.
struct RolloutStats {
  double mean_return = 0.0;
  double std_return = 0.0;
  double mean_discounted = 0.0;
  double success_rate = 0.0;
};

using PolicyFactory = std::function<std::function<Vector(const Vector&)>(std::uint64_t)>;

RolloutStats run_rollouts(const PointMazeSpec& spec, const PolicyFactory& make_policy,
                          int episodes, int horizon, double discount,
                          std::uint64_t seed);

}  // namespace sbr
