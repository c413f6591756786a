#include "sbr/envs.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <memory>

namespace sbr {

using nlohmann::json;

namespace {

constexpr double kWallEps = 1e-9;
constexpr double kGoalClearance = 2.5;

Index cell_of(double v) { return static_cast<Index>(std::floor(v)); }

}  // namespace

bool PointMazeSpec::cell_blocked(Index row, Index col) const {
  if (row < 0 || row >= rows() || col < 0 || col >= cols()) {
    return true;  // outside the grid counts as wall
  }
  return grid[static_cast<std::size_t>(row)][static_cast<std::size_t>(col)] != 0;
}

bool PointMazeSpec::is_free(double x, double y) const {
  return !cell_blocked(cell_of(y), cell_of(x));
}

void PointMazeSpec::validate() const {
  if (grid.empty() || grid[0].empty()) {
    throw ConfigError("maze grid is empty");
  }
  for (const auto& row : grid) {
    if (static_cast<Index>(row.size()) != cols()) {
      throw ConfigError("maze grid is ragged");
    }
  }
  if (!(tol > 0.0)) {
    throw ConfigError("goal tolerance must be positive");
  }
  if (!(dt > 0.0) || dt > 0.5) {
    throw ConfigError("dt must be in (0, 0.5] so a step cannot jump a wall cell");
  }
  if (horizon < 1) {
    throw ConfigError("horizon must be >= 1");
  }
  if (noise_dims < 0) {
    throw ConfigError("noise_dims must be >= 0");
  }
  if (!is_free(goal(0), goal(1))) {
    throw ConfigError("goal position is inside a wall");
  }
  // With a start region the center is only a box anchor and may sit on a wall.
  if (start_radius == 0.0 && !is_free(start(0), start(1))) {
    throw ConfigError("start position is inside a wall");
  }
  // Goal reachability from the start region is checked where a controller is
  // built; here we only check local validity.
}

PointMazeSpec load_layout_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open layout: " + path.string());
  }
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("layout " + path.string() + ": " + e.what());
  }
  PointMazeSpec spec;
  try {
    spec.grid = j.at("grid").get<std::vector<std::vector<int>>>();
    const auto start = j.at("start").get<std::vector<double>>();
    const auto goal = j.at("goal").get<std::vector<double>>();
    if (start.size() != 2 || goal.size() != 2) {
      throw SchemaError("layout start/goal must be [x, y]");
    }
    spec.start = Eigen::Vector2d(start[0], start[1]);
    spec.goal = Eigen::Vector2d(goal[0], goal[1]);
    spec.tol = j.at("tol").get<double>();
    spec.dt = j.at("dt").get<double>();
    spec.horizon = j.at("horizon").get<int>();
    spec.start_radius = j.value("start_radius", 0.0);
  } catch (const json::exception& e) {
    throw SchemaError("layout " + path.string() + ": " + e.what());
  }
  spec.validate();
  return spec;
}

void save_layout_file(const PointMazeSpec& spec, const std::filesystem::path& path) {
  json j;
  j["grid"] = spec.grid;
  j["start"] = {spec.start(0), spec.start(1)};
  j["start_radius"] = spec.start_radius;
  j["goal"] = {spec.goal(0), spec.goal(1)};
  j["tol"] = spec.tol;
  j["dt"] = spec.dt;
  j["horizon"] = spec.horizon;
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write layout: " + path.string());
  }
  out << j.dump(2) << "\n";
}

namespace {

PointMazeSpec make_layout(std::vector<std::string> art, Eigen::Vector2d start,
                          double start_radius, Eigen::Vector2d goal, double tol,
                          int horizon) {
  PointMazeSpec spec;
  for (const auto& row : art) {
    std::vector<int> cells;
    for (const char c : row) {
      cells.push_back(c == '#' ? 1 : 0);
    }
    spec.grid.push_back(std::move(cells));
  }
  spec.start = start;
  spec.start_radius = start_radius;
  spec.goal = goal;
  spec.tol = tol;
  spec.dt = 0.25;
  spec.horizon = horizon;
  spec.validate();
  return spec;
}

}  // namespace

PointMazeSpec builtin_layout(const std::string& name) {
  if (name == "open") {
    // Open room; goal in the far corner.
    return make_layout(
        {
            "######",
            "#....#",
            "#....#",
            "#....#",
            "#....#",
            "######",
        },
        /*start=*/{3.0, 3.0}, /*start_radius=*/2.0, /*goal=*/{4.5, 4.5},
        /*tol=*/0.4, /*horizon=*/80);
  }
  if (name == "umaze") {
    // Two long arms joined by a top corridor, all passages two cells wide;
    // goal deep in the left arm. Sized so a handful of demonstrations cannot
    // cover the free space.
    return make_layout(
        {
            "############",
            "#..........#",
            "#..........#",
            "#..######..#",
            "#..######..#",
            "#..######..#",
            "#..######..#",
            "#..######..#",
            "#..######..#",
            "#..######..#",
            "#..######..#",
            "#..######..#",
            "#..######..#",
            "############",
        },
        /*start=*/{6.0, 7.0}, /*start_radius=*/7.0, /*goal=*/{2.0, 12.5},
        /*tol=*/1.0, /*horizon=*/240);
  }
  if (name == "smaze") {
    // S-shaped corridor; the long way round.
    return make_layout(
        {
            "#########",
            "#.......#",
            "######..#",
            "#.......#",
            "#..######",
            "#.......#",
            "######..#",
            "#.......#",
            "#########",
        },
        /*start=*/{4.5, 4.5}, /*start_radius=*/4.5, /*goal=*/{1.5, 7.5},
        /*tol=*/0.5, /*horizon=*/200);
  }
  throw ConfigError("unknown layout '" + name + "'; shipped layouts: open, umaze, smaze");
}

std::vector<std::string> builtin_layout_names() { return {"open", "umaze", "smaze"}; }

PointMazeSpec resolve_layout(const std::string& name_or_path) {
  for (const auto& name : builtin_layout_names()) {
    if (name == name_or_path) {
      return builtin_layout(name);
    }
  }
  return load_layout_file(name_or_path);
}

PointMazeEnv::PointMazeEnv(PointMazeSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  state_.obs = Vector::Zero(spec_.obs_dim());
}

const EnvState& PointMazeEnv::reset(std::uint64_t seed) {
  rng_ = Rng(seed);
  double x = spec_.start(0);
  double y = spec_.start(1);
  if (spec_.start_radius > 0.0) {
    const double r = spec_.start_radius;
    const double xlo = std::max(spec_.start(0) - r, 0.0);
    const double xhi = std::min(spec_.start(0) + r, static_cast<double>(spec_.cols()));
    const double ylo = std::max(spec_.start(1) - r, 0.0);
    const double yhi = std::min(spec_.start(1) + r, static_cast<double>(spec_.rows()));
    bool placed = false;
    for (int tries = 0; tries < 1000; ++tries) {
      x = rng_.uniform(xlo, xhi);
      y = rng_.uniform(ylo, yhi);
      // Starting on top of the goal would end the episode at t=0; keep the
      // start region clear of a goal neighborhood.
      if (spec_.is_free(x, y) &&
          (Eigen::Vector2d(x, y) - spec_.goal).norm() > kGoalClearance) {
        placed = true;
        break;
      }
    }
    if (!placed) {
      throw ContractError("could not sample a free start position");
    }
  }
  state_.obs = Vector::Zero(spec_.obs_dim());
  state_.obs(0) = x;
  state_.obs(1) = y;
  state_.step_count = 0;
  return state_;
}

Vector clip_action(const Vector& action) {
  return action.cwiseMax(-1.0).cwiseMin(1.0);
}

namespace {

double segment_point_distance(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                              const Eigen::Vector2d& p) {
  const Eigen::Vector2d ab = b - a;
  const double len_sq = ab.squaredNorm();
  if (len_sq == 0.0) {
    return (p - a).norm();
  }
  const double t = std::clamp((p - a).dot(ab) / len_sq, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

// Move along one axis; when the destination cell is blocked, stop just short
// of the boundary.
double move_axis(const PointMazeSpec& spec, double cur_x, double cur_y, double delta,
                 bool horizontal) {
  const double target = (horizontal ? cur_x : cur_y) + delta;
  const double ox = horizontal ? target : cur_x;
  const double oy = horizontal ? cur_y : target;
  if (spec.is_free(ox, oy)) {
    return target;
  }
  const double cur = horizontal ? cur_x : cur_y;
  if (delta > 0.0) {
    return std::floor(cur) + 1.0 - kWallEps;
  }
  return std::floor(cur) + kWallEps;
}

}  // namespace

StepResult PointMazeEnv::step(const Vector& action) {
  if (action.size() != 2) {
    throw DimensionError("point maze actions are 2-D, got " + std::to_string(action.size()));
  }
  const Vector a = clip_action(action);
  const double x0 = state_.obs(0);
  const double y0 = state_.obs(1);
  const double x = move_axis(spec_, x0, y0, spec_.dt * a(0), /*horizontal=*/true);
  const double y = move_axis(spec_, x, y0, spec_.dt * a(1), /*horizontal=*/false);
  state_.obs(0) = x;
  state_.obs(1) = y;
  // realized velocity: wall clamping shows up as a shorter step
  state_.obs(2) = (x - x0) / spec_.dt;
  state_.obs(3) = (y - y0) / spec_.dt;
  for (int d = 0; d < spec_.noise_dims; ++d) {
    state_.obs(4 + d) += spec_.noise_step * rng_.normal();
  }
  state_.step_count += 1;

  // The goal check sweeps the step's motion path (axis move in x, then y) so
  // a step cannot jump across the tolerance disk.
  const double dist = std::min(
      segment_point_distance({x0, y0}, {x, y0}, spec_.goal),
      segment_point_distance({x, y0}, {x, y}, spec_.goal));
  const bool at_goal = dist <= spec_.tol;
  StepResult result;
  result.reward = at_goal ? 1.0 : 0.0;
  result.done = at_goal || state_.step_count >= spec_.horizon;
  result.state = state_;
  return result;
}

WaypointController::WaypointController(const PointMazeSpec& spec,
                                       const Eigen::Vector2d& target)
    : spec_(spec), target_(target) {
  if (!spec_.is_free(target(0), target(1))) {
    throw PlanningError("controller target is inside a wall");
  }
  const Index rows = spec_.rows();
  const Index cols = spec_.cols();
  dist_.assign(static_cast<std::size_t>(rows), std::vector<int>(static_cast<std::size_t>(cols), -1));
  std::deque<std::pair<Index, Index>> queue;
  const Index tr = cell_of(target(1));
  const Index tc = cell_of(target(0));
  dist_[static_cast<std::size_t>(tr)][static_cast<std::size_t>(tc)] = 0;
  queue.emplace_back(tr, tc);
  while (!queue.empty()) {
    const auto [r, c] = queue.front();
    queue.pop_front();
    const int d = dist_[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    const Index dr[] = {1, -1, 0, 0};
    const Index dc[] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      const Index nr = r + dr[k];
      const Index nc = c + dc[k];
      if (spec_.cell_blocked(nr, nc)) {
        continue;
      }
      int& nd = dist_[static_cast<std::size_t>(nr)][static_cast<std::size_t>(nc)];
      if (nd < 0) {
        nd = d + 1;
        queue.emplace_back(nr, nc);
      }
    }
  }
}

bool WaypointController::reachable(double x, double y) const {
  const Index r = cell_of(y);
  const Index c = cell_of(x);
  if (spec_.cell_blocked(r, c)) {
    return false;
  }
  return dist_[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] >= 0;
}

bool WaypointController::fully_reachable() const {
  for (Index r = 0; r < spec_.rows(); ++r) {
    for (Index c = 0; c < spec_.cols(); ++c) {
      if (!spec_.cell_blocked(r, c) &&
          dist_[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] < 0) {
        return false;
      }
    }
  }
  return true;
}

Vector WaypointController::action(const Vector& obs) const {
  const double x = obs(0);
  const double y = obs(1);
  const Index r = cell_of(y);
  const Index c = cell_of(x);
  if (!reachable(x, y)) {
    return Vector::Zero(2);  // stuck; no path from here
  }
  Eigen::Vector2d aim;
  const int here = dist_[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  if (here == 0) {
    aim = target_;
  } else {
    // Step toward the neighbor cell center with the smallest distance.
    int best = here;
    Index br = r, bc = c;
    const Index dr[] = {1, -1, 0, 0};
    const Index dc[] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      const Index nr = r + dr[k];
      const Index nc = c + dc[k];
      if (spec_.cell_blocked(nr, nc)) {
        continue;
      }
      const int nd = dist_[static_cast<std::size_t>(nr)][static_cast<std::size_t>(nc)];
      if (nd >= 0 && nd < best) {
        best = nd;
        br = nr;
        bc = nc;
      }
    }
    aim = Eigen::Vector2d(static_cast<double>(bc) + 0.5, static_cast<double>(br) + 0.5);
  }
  const Eigen::Vector2d delta = aim - Eigen::Vector2d(x, y);
  Vector a(2);
  a << delta(0) / spec_.dt, delta(1) / spec_.dt;
  return clip_action(a);
}

WaypointController scripted_expert(const PointMazeSpec& spec) {
  WaypointController controller(spec, spec.goal);
  if (!controller.fully_reachable()) {
    throw PlanningError("some free cells cannot reach the goal");
  }
  return controller;
}

std::string to_string(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::Expert: return "expert";
    case GeneratorKind::WrongGoal: return "wrong_goal";
    case GeneratorKind::RandomWalk: return "random_walk";
    case GeneratorKind::EarlyFailure: return "early_failure";
  }
  return "?";
}

GeneratorKind generator_kind_from_string(const std::string& s) {
  if (s == "expert") return GeneratorKind::Expert;
  if (s == "wrong_goal") return GeneratorKind::WrongGoal;
  if (s == "random_walk") return GeneratorKind::RandomWalk;
  if (s == "early_failure") return GeneratorKind::EarlyFailure;
  throw ConfigError("unknown generator kind '" + s + "'");
}

namespace {

struct Rollout {
  Matrix states;
  Matrix actions;
  bool reached_goal = false;
};

// Runs one episode with a per-step action callback; `stop` may end the
// episode early (wrong-goal trajectories stop at their own target).
Rollout run_episode(const PointMazeSpec& spec, std::uint64_t env_seed,
                    const std::function<Vector(const Vector&, int)>& policy,
                    const std::function<bool(const Vector&)>& stop) {
  PointMazeEnv env(spec);
  EnvState s = env.reset(env_seed);
  std::vector<Vector> states{s.obs};
  std::vector<Vector> actions;
  bool reached = false;
  for (int t = 0; t < spec.horizon; ++t) {
    const Vector a = clip_action(policy(s.obs, t));
    const StepResult r = env.step(a);
    actions.push_back(a);
    states.push_back(r.state.obs);
    s = r.state;
    if (r.reward > 0.0) {
      reached = true;
    }
    if (r.done || (stop && stop(s.obs))) {
      break;
    }
  }
  Rollout out;
  out.states = Matrix(static_cast<Index>(states.size()), spec.obs_dim());
  for (std::size_t i = 0; i < states.size(); ++i) {
    out.states.row(static_cast<Index>(i)) = states[i].transpose();
  }
  out.actions = Matrix(static_cast<Index>(actions.size()), 2);
  for (std::size_t i = 0; i < actions.size(); ++i) {
    out.actions.row(static_cast<Index>(i)) = actions[i].transpose();
  }
  out.reached_goal = reached;
  return out;
}

}  // namespace

std::pair<Dataset, Dataset> generate_dataset(const PointMazeSpec& spec,
                                             const std::vector<GeneratorSpec>& generators) {
  spec.validate();
  Dataset expert_data;
  Dataset offline_data;
  std::int64_t next_id = 0;

  for (const auto& gen : generators) {
    if (gen.count < 0) {
      throw ConfigError("generator count must be >= 0");
    }
    for (int i = 0; i < gen.count; ++i) {
      const std::uint64_t traj_seed = derive_seed(gen.seed, to_string(gen.kind)) +
                                      static_cast<std::uint64_t>(i);
      const std::uint64_t env_seed = derive_seed(traj_seed, "env");
      Rng policy_rng(derive_seed(traj_seed, "policy"));
      Rollout rollout;

      switch (gen.kind) {
        case GeneratorKind::Expert: {
          const WaypointController expert = scripted_expert(spec);
          rollout = run_episode(
              spec, env_seed,
              [&](const Vector& obs, int) { return expert.action(obs); }, nullptr);
          break;
        }
        case GeneratorKind::WrongGoal: {
          const WaypointController controller(spec, gen.alt_goal);
          const Eigen::Vector2d alt = gen.alt_goal;
          rollout = run_episode(
              spec, env_seed,
              [&](const Vector& obs, int) { return controller.action(obs); },
              [&spec, alt](const Vector& obs) {
                return (Eigen::Vector2d(obs(0), obs(1)) - alt).norm() <= spec.tol;
              });
          break;
        }
        case GeneratorKind::RandomWalk: {
          rollout = run_episode(
              spec, env_seed,
              [&](const Vector&, int) {
                Vector a(2);
                a << policy_rng.uniform(-1.0, 1.0), policy_rng.uniform(-1.0, 1.0);
                return a;
              },
              nullptr);
          break;
        }
        case GeneratorKind::EarlyFailure: {
          const WaypointController expert = scripted_expert(spec);
          // Dry run to learn when the expert would finish from this start.
          const Rollout probe = run_episode(
              spec, env_seed,
              [&](const Vector& obs, int) { return expert.action(obs); }, nullptr);
          const double frac = policy_rng.uniform(0.3, 0.8);
          const int switch_t =
              std::max(1, static_cast<int>(std::lround(frac * probe.actions.rows())));
          rollout = run_episode(
              spec, env_seed,
              [&](const Vector& obs, int t) -> Vector {
                if (t < switch_t) {
                  return expert.action(obs);
                }
                Vector a(2);
                a << policy_rng.uniform(-1.0, 1.0), policy_rng.uniform(-1.0, 1.0);
                return a;
              },
              nullptr);
          break;
        }
      }

      if (rollout.actions.rows() == 0) {
        continue;  // start sampled inside the goal tolerance; nothing to record
      }
      Trajectory traj;
      traj.traj_id = next_id++;
      traj.source = gen.kind == GeneratorKind::Expert ? Source::Expert : Source::Offline;
      traj.states = std::move(rollout.states);
      traj.actions = std::move(rollout.actions);
      if (traj.source == Source::Expert) {
        expert_data.add(std::move(traj));
      } else {
        offline_data.add(std::move(traj));
      }
    }
  }
  return {std::move(expert_data), std::move(offline_data)};
}

RolloutStats run_rollouts(const PointMazeSpec& spec, const PolicyFactory& make_policy,
                          int episodes, int horizon, double discount,
                          std::uint64_t seed) {
  if (episodes < 1) {
    throw ContractError("run_rollouts: episodes must be >= 1");
  }
  PointMazeSpec capped = spec;
  capped.horizon = horizon;
  std::vector<double> returns;
  std::vector<double> discounted;
  int successes = 0;
  for (int ep = 0; ep < episodes; ++ep) {
    const std::uint64_t ep_seed = derive_seed(seed, "episode") + static_cast<std::uint64_t>(ep);
    const auto policy = make_policy(ep_seed);
    PointMazeEnv env(capped);
    EnvState s = env.reset(ep_seed);
    double ret = 0.0;
    double disc = 0.0;
    double g = 1.0;
    bool success = false;
    for (int t = 0; t < horizon; ++t) {
      const StepResult r = env.step(policy(s.obs));
      ret += r.reward;
      disc += g * r.reward;
      g *= discount;
      s = r.state;
      if (r.reward > 0.0) {
        success = true;
      }
      if (r.done) {
        break;
      }
    }
    returns.push_back(ret);
    discounted.push_back(disc);
    successes += success ? 1 : 0;
  }
  RolloutStats stats;
  const double n = static_cast<double>(episodes);
  for (const double r : returns) {
    stats.mean_return += r / n;
  }
  double var = 0.0;
  for (const double r : returns) {
    var += (r - stats.mean_return) * (r - stats.mean_return) / n;
  }
  stats.std_return = std::sqrt(var);
  for (const double d : discounted) {
    stats.mean_discounted += d / n;
  }
  stats.success_rate = static_cast<double>(successes) / n;
  return stats;
}

ReferenceReturns reference_returns(const PointMazeSpec& spec, int episodes,
                                   std::uint64_t seed) {
  const WaypointController expert = scripted_expert(spec);
  const RolloutStats expert_stats = run_rollouts(
      spec,
      [&expert](std::uint64_t) {
        return [&expert](const Vector& obs) { return expert.action(obs); };
      },
      episodes, spec.horizon, 0.99, seed);
  const RolloutStats random_stats = run_rollouts(
      spec,
      [](std::uint64_t ep_seed) {
        auto rng = std::make_shared<Rng>(derive_seed(ep_seed, "random_policy"));
        return [rng](const Vector&) {
          Vector a(2);
          a << rng->uniform(-1.0, 1.0), rng->uniform(-1.0, 1.0);
          return a;
        };
      },
      episodes, spec.horizon, 0.99, seed);
  return ReferenceReturns{random_stats.mean_return, expert_stats.mean_return};
}

}  // namespace sbr
