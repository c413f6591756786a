#pragma once

#include "sbr/similarity.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <vector>

namespace sbr {

struct RetrievalConfig {
  double delta = 0.9;          // selection threshold on the criterion
  int steps = 3;               // K
  bool recompute_stats = true; // refresh S+/S- per step over the mutated sets
  double decay = 0.9;          // per-step weight, consumed by policy training

  void validate() const;
};

// One retrieved transition: the predecessor (source) of an expert-like
// offline state (trigger), discovered at search step `step`.
struct RetrievedSample {
  StateId source;
  StateId trigger;
  int step = 0;
  Vector state;       // s_{t-1}, raw units
  Vector action;      // a_{t-1}
  Vector next_state;  // s_t
};

struct RetrievedSet {
  std::vector<std::vector<RetrievedSample>> per_step;

  std::vector<RetrievedSample> all() const;
  std::size_t total() const;
};

struct StepReport {
  int candidates = 0;  // criterion passes, any trigger time
  int added = 0;       // candidate sources with t-1 >= 0, pre-prune
  int removed = 0;     // pruned because the source itself looked expert-like
  double s_plus = 0.0;
  double s_minus = 0.0;
  bool degenerate = false;
};

struct SearchReport {
  std::vector<StepReport> steps;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

// Iterative backward search. Each step reads the expert side grown by the
// sources retrieved so far and the offline side shrunk by the same ids; a
// candidate survives only if its own criterion stays at or below delta.
class RetrievalEngine {
 public:
  RetrievalEngine(const Dataset& expert, const Dataset& offline, const WorldModel& wm,
                  RetrievalConfig config);

  // Runs search step k = steps_done() and returns D_u^k.
  std::vector<RetrievedSample> step();

  int steps_done() const { return static_cast<int>(report_.steps.size()); }
  const SearchReport& report() const { return report_; }

 private:
  const Dataset& expert_;
  const Dataset& offline_;
  const WorldModel& wm_;
  RetrievalConfig config_;
  std::map<std::int64_t, Matrix> offline_latents_;
  std::vector<StateId> offline_ids_;  // sorted
  std::vector<std::pair<StateId, Vector>> retrieved_extra_;  // source latents
  std::set<StateId> retrieved_ids_;
  std::optional<CriterionStats> fixed_stats_;
  SearchReport report_;
};

RetrievedSet run_retrieval(const Dataset& expert, const Dataset& offline,
                           const WorldModel& wm, const RetrievalConfig& config,
                           SearchReport* report = nullptr);

// Independent naive implementation for verification; shares only the
// similarity metric and the encoder with the engine above.
RetrievedSet oracle_retrieval(const Dataset& expert, const Dataset& offline,
                              const WorldModel& wm, const RetrievalConfig& config);

// JSON-lines export of retrieved samples, plus loader for the policy stage.
inline constexpr const char* kRetrievedFormat = "sbr-ret-v1";
void save_retrieved(const RetrievedSet& set, const std::filesystem::path& path);
RetrievedSet load_retrieved(const std::filesystem::path& path);

}  // namespace sbr
