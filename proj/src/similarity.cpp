#include "sbr/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sbr {

double similarity(const Vector& z_a, const Vector& z_b) {
  if (z_a.size() != z_b.size()) {
    throw DimensionError("similarity: latent dims " + std::to_string(z_a.size()) +
                         " vs " + std::to_string(z_b.size()));
  }
  // Sequential accumulation, so any plainly written double loop reproduces
  // the value bit-for-bit.
  double acc = 0.0;
  for (Index i = 0; i < z_a.size(); ++i) {
    const double d = z_a(i) - z_b(i);
    acc += d * d;
  }
  return -std::sqrt(acc);
}

SimilarityIndex SimilarityIndex::build(const WorldModel& wm,
                                       const std::vector<const Dataset*>& datasets,
                                       const std::vector<std::pair<StateId, Vector>>& extra_latents) {
  std::vector<std::pair<StateId, Vector>> entries;
  for (const Dataset* d : datasets) {
    for (const auto& traj : d->trajectories()) {
      const Matrix latents = wm.encode_batch(traj.states);
      for (Index t = 0; t < latents.rows(); ++t) {
        entries.emplace_back(StateId{traj.traj_id, t}, latents.row(t).transpose());
      }
    }
  }
  entries.insert(entries.end(), extra_latents.begin(), extra_latents.end());
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  SimilarityIndex index;
  index.wm_ = &wm;
  index.ids_.reserve(entries.size());
  index.rows_.reserve(entries.size());
  for (auto& [id, latent] : entries) {
    if (latent.size() != wm.latent_dim()) {
      throw DimensionError("SimilarityIndex: latent entry of dim " +
                           std::to_string(latent.size()));
    }
    index.ids_.push_back(id);
    index.rows_.push_back(std::move(latent));
  }
  return index;
}

Matrix SimilarityIndex::latents() const {
  Matrix m(static_cast<Index>(rows_.size()), wm_ == nullptr ? 0 : wm_->latent_dim());
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    m.row(static_cast<Index>(i)) = rows_[i].transpose();
  }
  return m;
}

std::pair<double, StateId> SimilarityIndex::max_similarity_latent(const Vector& z_query) const {
  if (empty()) {
    throw ContractError("max_expert_similarity on an empty index");
  }
  double best = -std::numeric_limits<double>::infinity();
  std::size_t best_row = 0;
  for (std::size_t r = 0; r < rows_.size(); ++r) {
    const double sim = similarity(rows_[r], z_query);
    // strict > keeps the first (smallest StateId) among ties
    if (sim > best) {
      best = sim;
      best_row = r;
    }
  }
  return {best, ids_[best_row]};
}

std::pair<double, StateId> SimilarityIndex::max_similarity(const Vector& raw_state) const {
  return max_similarity_latent(wm_->encode(raw_state));
}

CriterionStats compute_stats(const SimilarityIndex& index, const Matrix& offline_states) {
  return compute_stats_and_sims(index, offline_states, nullptr);
}

CriterionStats compute_stats_and_sims(const SimilarityIndex& index,
                                      const Matrix& offline_states,
                                      std::vector<double>* best_sims) {
  if (index.empty() || offline_states.rows() == 0) {
    throw ContractError("compute_stats: both state sets must be non-empty");
  }
  const Matrix latents = index.model().encode_batch(offline_states);
  CriterionStats stats;
  stats.s_plus = -std::numeric_limits<double>::infinity();
  stats.s_minus = std::numeric_limits<double>::infinity();
  if (best_sims != nullptr) {
    best_sims->clear();
    best_sims->reserve(static_cast<std::size_t>(latents.rows()));
  }
  for (Index r = 0; r < latents.rows(); ++r) {
    const double sim = index.max_similarity_latent(latents.row(r).transpose()).first;
    stats.s_plus = std::max(stats.s_plus, sim);
    stats.s_minus = std::min(stats.s_minus, sim);
    if (best_sims != nullptr) {
      best_sims->push_back(sim);
    }
  }
  if (stats.degenerate()) {
    throw DegenerateStatsError(
        "similarity spread S+ - S- below 1e-9; collapsed encoder or duplicate data");
  }
  return stats;
}

double criterion_from_similarity(const CriterionStats& stats, double best_sim) {
  if (stats.degenerate()) {
    throw DegenerateStatsError("criterion over degenerate stats");
  }
  return (best_sim - stats.s_minus) / (stats.s_plus - stats.s_minus);
}

double criterion_value(const CriterionStats& stats, const SimilarityIndex& index,
                       const Vector& raw_state) {
  return criterion_from_similarity(stats, index.max_similarity(raw_state).first);
}

}  // namespace sbr
