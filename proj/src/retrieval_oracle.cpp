#include "sbr/retrieval.hpp"

#include <algorithm>
#include <limits>

namespace sbr {

// Straight-line rewrite of the search, kept deliberately naive: flat lists,
// nested loops, no index structure. Shares only similarity() and the frozen
// encoder with the engine it cross-checks.
RetrievedSet oracle_retrieval(const Dataset& expert, const Dataset& offline,
                              const WorldModel& wm, const RetrievalConfig& config) {
  config.validate();
  RetrievedSet result;
  result.per_step.assign(static_cast<std::size_t>(config.steps), {});
  if (offline.empty()) {
    return result;
  }
  if (expert.empty()) {
    throw ContractError("oracle_retrieval requires non-empty expert data");
  }

  struct Entry {
    StateId id;
    Vector latent;
  };

  // Latents for every state on both sides, each list sorted by id.
  std::vector<Entry> expert_side;
  for (const auto& traj : expert.trajectories()) {
    const Matrix z = wm.encode_batch(traj.states);
    for (Index t = 0; t < z.rows(); ++t) {
      expert_side.push_back({StateId{traj.traj_id, t}, z.row(t).transpose()});
    }
  }
  std::vector<Entry> offline_side;
  for (const auto& traj : offline.trajectories()) {
    const Matrix z = wm.encode_batch(traj.states);
    for (Index t = 0; t < z.rows(); ++t) {
      offline_side.push_back({StateId{traj.traj_id, t}, z.row(t).transpose()});
    }
  }
  const auto by_id = [](const Entry& a, const Entry& b) { return a.id < b.id; };
  std::sort(expert_side.begin(), expert_side.end(), by_id);
  std::sort(offline_side.begin(), offline_side.end(), by_id);

  const auto best_against = [&](const std::vector<Entry>& side, const Vector& z) {
    double best = -std::numeric_limits<double>::infinity();
    for (const Entry& e : side) {
      const double sim = similarity(e.latent, z);
      if (sim > best) {
        best = sim;
      }
    }
    return best;
  };

  std::vector<bool> taken(offline_side.size(), false);
  double s_plus = 0.0, s_minus = 0.0;
  bool have_fixed = false;

  for (int k = 0; k < config.steps; ++k) {
    if (config.recompute_stats || k == 0) {
      s_plus = -std::numeric_limits<double>::infinity();
      s_minus = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < offline_side.size(); ++i) {
        if (taken[i]) {
          continue;
        }
        const double sim = best_against(expert_side, offline_side[i].latent);
        s_plus = std::max(s_plus, sim);
        s_minus = std::min(s_minus, sim);
      }
      if (!(s_plus - s_minus >= 1e-9)) {
        if (k == 0) {
          throw DegenerateStatsError("oracle: degenerate stats at step 0");
        }
        continue;  // step yields nothing
      }
      have_fixed = true;
    } else if (!have_fixed) {
      continue;
    }

    const auto criterion_of = [&](const Vector& z) {
      return (best_against(expert_side, z) - s_minus) / (s_plus - s_minus);
    };

    std::vector<RetrievedSample> found;
    for (std::size_t i = 0; i < offline_side.size(); ++i) {
      if (taken[i]) {
        continue;
      }
      const Entry& trigger = offline_side[i];
      if (!(criterion_of(trigger.latent) > config.delta)) {
        continue;
      }
      if (trigger.id.t - 1 < 0) {
        continue;
      }
      // the predecessor in the same trajectory is the previous list entry
      const Entry& source = offline_side[i - 1];
      if (criterion_of(source.latent) > config.delta) {
        continue;
      }
      const Trajectory& traj = offline.by_id(trigger.id.traj_id);
      RetrievedSample sample;
      sample.source = source.id;
      sample.trigger = trigger.id;
      sample.step = k;
      sample.state = traj.states.row(source.id.t).transpose();
      sample.action = traj.actions.row(source.id.t).transpose();
      sample.next_state = traj.states.row(trigger.id.t).transpose();
      found.push_back(std::move(sample));
    }

    for (const RetrievedSample& sample : found) {
      for (std::size_t i = 0; i < offline_side.size(); ++i) {
        if (offline_side[i].id == sample.source) {
          taken[i] = true;
          expert_side.push_back(offline_side[i]);
          break;
        }
      }
    }
    std::sort(expert_side.begin(), expert_side.end(), by_id);
    result.per_step[static_cast<std::size_t>(k)] = std::move(found);
  }
  return result;
}

}  // namespace sbr
