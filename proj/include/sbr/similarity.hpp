#pragma once

#include "sbr/dataset.hpp"
#include "sbr/world_model.hpp"

#include <utility>
#include <vector>

namespace sbr {

// Negative Euclidean distance in latent space; 0 iff the latents coincide.
double similarity(const Vector& z_a, const Vector& z_b);

// Normalization constants: S+ / S- are the max / min over a query population
// of each state's best similarity to the expert side.
struct CriterionStats {
  double s_plus = 0.0;
  double s_minus = 0.0;

  bool degenerate() const { return s_plus - s_minus < 1e-9; }
};

// Encoded expert-side states, rows sorted by StateId. Immutable once built;
// queries are pure. Every distance goes through similarity() on contiguous
// vectors so independent implementations can reproduce results bit-exactly.
class SimilarityIndex {
 public:
  // Encodes every state (t = 0..length) of every trajectory in `datasets`;
  // `extra_latents` are pre-encoded entries appended as-is.
  static SimilarityIndex build(const WorldModel& wm,
                               const std::vector<const Dataset*>& datasets,
                               const std::vector<std::pair<StateId, Vector>>& extra_latents = {});

  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  const std::vector<StateId>& ids() const { return ids_; }
  Matrix latents() const;
  const WorldModel& model() const { return *wm_; }

  // Exact scan; ties resolve to the smallest StateId. Throws on empty index.
  std::pair<double, StateId> max_similarity_latent(const Vector& z_query) const;
  std::pair<double, StateId> max_similarity(const Vector& raw_state) const;

 private:
  const WorldModel* wm_ = nullptr;
  std::vector<Vector> rows_;
  std::vector<StateId> ids_;
};

inline std::pair<double, StateId> max_expert_similarity(const SimilarityIndex& index,
                                                        const Vector& raw_state) {
  return index.max_similarity(raw_state);
}

// S+/S- over raw offline states; throws DegenerateStatsError when the spread
// collapses (collapsed encoder or duplicate data).
CriterionStats compute_stats(const SimilarityIndex& index, const Matrix& offline_states);

// Same pass, but also hands back each state's best similarity for reuse.
CriterionStats compute_stats_and_sims(const SimilarityIndex& index,
                                      const Matrix& offline_states,
                                      std::vector<double>* best_sims);

// (best_sim - S-) / (S+ - S-)
double criterion_from_similarity(const CriterionStats& stats, double best_sim);
double criterion_value(const CriterionStats& stats, const SimilarityIndex& index,
                       const Vector& raw_state);

}  // namespace sbr
