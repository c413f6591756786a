#pragma once

#include "sbr/common.hpp"

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace sbr {

enum class Source { Expert, Offline };

std::string to_string(Source s);
Source source_from_string(const std::string& s);

// A trajectory stores the full state sequence; transition t is
// (states.row(t), actions.row(t), states.row(t+1)), so the chaining invariant
// holds structurally.
struct Trajectory {
  std::int64_t traj_id = 0;
  Source source = Source::Offline;
  Matrix states;   // [length+1, state_dim]
  Matrix actions;  // [length, action_dim]

  Index length() const { return actions.rows(); }
};

// Identity of a state: (trajectory, time index). The terminal next_state has
// t == length(). Identity semantics, never value equality.
struct StateId {
  std::int64_t traj_id = 0;
  Index t = 0;

  auto operator<=>(const StateId&) const = default;
};

std::string to_string(const StateId& id);

class Dataset {
 public:
  void add(Trajectory traj);

  const std::vector<Trajectory>& trajectories() const { return trajs_; }
  std::size_t size() const { return trajs_.size(); }
  bool empty() const { return trajs_.empty(); }

  // -1 while the dataset is empty.
  Index state_dim() const { return state_dim_; }
  Index action_dim() const { return action_dim_; }

  Index transition_count() const;
  Index state_count() const;

  bool has_id(std::int64_t traj_id) const { return by_id_.count(traj_id) > 0; }
  const Trajectory& by_id(std::int64_t traj_id) const;

  Vector state_at(const StateId& id) const;

  // All (traj, t) identities, t in [0, length], sorted.
  std::vector<StateId> all_state_ids() const;

 private:
  std::vector<Trajectory> trajs_;
  std::map<std::int64_t, std::size_t> by_id_;
  Index state_dim_ = -1;
  Index action_dim_ = -1;
};

// JSON-lines dataset file: header {"format":"sbr-traj-v1"} then one
// trajectory per line with keys traj_id, source, states, actions and
// len(states) == len(actions)+1.
inline constexpr const char* kDatasetFormat = "sbr-traj-v1";

Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

// Contiguous window of horizon+1 transitions starting at `start`.
struct Window {
  const Trajectory* traj = nullptr;
  Index start = 0;
};

// Every window of horizon+1 transitions; per trajectory that is
// max(0, length - horizon) windows. Trajectories are visited in traj_id
// order so the enumeration is independent of file order.
std::vector<Window> windows(const Dataset& dataset, Index horizon);
std::vector<Window> windows(const std::vector<const Dataset*>& datasets, Index horizon);

struct NormStats {
  Vector state_mean, state_std;
  Vector action_mean, action_std;

  static NormStats identity(Index state_dim, Index action_dim);

  Vector normalize_state(const Vector& s) const;
  Vector denormalize_state(const Vector& s) const;
  Matrix normalize_states(const Matrix& rows) const;
  Matrix denormalize_states(const Matrix& rows) const;
  Vector normalize_action(const Vector& a) const;
  Vector denormalize_action(const Vector& a) const;
  Matrix normalize_actions(const Matrix& rows) const;
  Matrix denormalize_actions(const Matrix& rows) const;
};

// Per-dimension mean/std over every state and action in the given datasets
// (population std, floored at 1e-6 with a warning).
NormStats compute_norm_stats(const std::vector<const Dataset*>& datasets);

Dataset normalized(const Dataset& dataset, const NormStats& stats);

}  // namespace sbr
