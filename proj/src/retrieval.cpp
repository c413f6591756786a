#include "sbr/retrieval.hpp"

#include <chrono>
#include <fstream>
#include <limits>

namespace sbr {

using nlohmann::json;

void RetrievalConfig::validate() const {
  if (!(delta > 0.0) || !(delta < 1.0)) {
    throw ConfigError("retrieval delta must be in (0, 1)");
  }
  if (steps < 1) {
    throw ConfigError("retrieval steps must be >= 1");
  }
  if (!(decay > 0.0) || decay > 1.0) {
    throw ConfigError("retrieval decay must be in (0, 1]");
  }
}

std::vector<RetrievedSample> RetrievedSet::all() const {
  std::vector<RetrievedSample> out;
  for (const auto& step : per_step) {
    out.insert(out.end(), step.begin(), step.end());
  }
  return out;
}

std::size_t RetrievedSet::total() const {
  std::size_t n = 0;
  for (const auto& step : per_step) {
    n += step.size();
  }
  return n;
}

json SearchReport::to_json() const {
  json steps_json = json::array();
  for (const auto& s : steps) {
    steps_json.push_back({{"candidates", s.candidates},
                          {"added", s.added},
                          {"removed", s.removed},
                          {"s_plus", s.s_plus},
                          {"s_minus", s.s_minus},
                          {"degenerate", s.degenerate}});
  }
  return {{"steps", steps_json}, {"seconds", seconds}};
}

RetrievalEngine::RetrievalEngine(const Dataset& expert, const Dataset& offline,
                                 const WorldModel& wm, RetrievalConfig config)
    : expert_(expert), offline_(offline), wm_(wm), config_(config) {
  config_.validate();
  if (expert_.empty()) {
    throw ContractError("retrieval requires non-empty expert data");
  }
  if (offline_.empty()) {
    throw ContractError("retrieval requires non-empty offline data");
  }
  for (const auto& traj : offline_.trajectories()) {
    if (expert_.has_id(traj.traj_id)) {
      throw SchemaError("trajectory id " + std::to_string(traj.traj_id) +
                        " appears in both expert and offline data");
    }
    offline_latents_.emplace(traj.traj_id, wm_.encode_batch(traj.states));
  }
  offline_ids_ = offline_.all_state_ids();
}

std::vector<RetrievedSample> RetrievalEngine::step() {
  const int k = steps_done();
  StepReport step_report;

  // Expert side for this step: D_e plus every source retrieved so far.
  const SimilarityIndex index =
      SimilarityIndex::build(wm_, {&expert_}, retrieved_extra_);

  // Best similarity for every still-offline state, in StateId order.
  std::vector<StateId> live_ids;
  std::vector<double> best_sims;
  live_ids.reserve(offline_ids_.size());
  for (const StateId& id : offline_ids_) {
    if (retrieved_ids_.count(id) > 0) {
      continue;
    }
    const Matrix& latents = offline_latents_.at(id.traj_id);
    live_ids.push_back(id);
    best_sims.push_back(
        index.max_similarity_latent(latents.row(id.t).transpose()).first);
  }

  CriterionStats stats;
  if (config_.recompute_stats || k == 0) {
    stats.s_plus = -std::numeric_limits<double>::infinity();
    stats.s_minus = std::numeric_limits<double>::infinity();
    for (const double sim : best_sims) {
      stats.s_plus = std::max(stats.s_plus, sim);
      stats.s_minus = std::min(stats.s_minus, sim);
    }
    if (live_ids.empty() || stats.degenerate()) {
      if (k == 0) {
        throw DegenerateStatsError(
            "similarity spread S+ - S- below 1e-9 at search step 0");
      }
      log_warn("retrieval step " + std::to_string(k) +
               ": degenerate similarity stats, step yields nothing");
      step_report.degenerate = true;
      step_report.s_plus = live_ids.empty() ? 0.0 : stats.s_plus;
      step_report.s_minus = live_ids.empty() ? 0.0 : stats.s_minus;
      report_.steps.push_back(step_report);
      return {};
    }
    if (k == 0) {
      fixed_stats_ = stats;
    }
  } else {
    stats = *fixed_stats_;
  }
  step_report.s_plus = stats.s_plus;
  step_report.s_minus = stats.s_minus;

  // Criterion per live state, then the add-and-prune pass.
  std::map<StateId, double> criterion;
  for (std::size_t i = 0; i < live_ids.size(); ++i) {
    criterion.emplace(live_ids[i], criterion_from_similarity(stats, best_sims[i]));
  }
  const auto source_criterion = [&](const StateId& source) {
    const auto it = criterion.find(source);
    if (it != criterion.end()) {
      return it->second;
    }
    // Already on the expert side; evaluate against the same index and stats.
    const Matrix& latents = offline_latents_.at(source.traj_id);
    const double sim =
        index.max_similarity_latent(latents.row(source.t).transpose()).first;
    return criterion_from_similarity(stats, sim);
  };

  std::vector<RetrievedSample> found;
  for (const StateId& trigger : live_ids) {
    const double f = criterion.at(trigger);
    if (!(f > config_.delta)) {
      continue;
    }
    step_report.candidates += 1;
    if (trigger.t - 1 < 0) {
      continue;
    }
    step_report.added += 1;
    const StateId source{trigger.traj_id, trigger.t - 1};
    if (source_criterion(source) > config_.delta) {
      step_report.removed += 1;
      continue;
    }
    const Trajectory& traj = offline_.by_id(trigger.traj_id);
    RetrievedSample sample;
    sample.source = source;
    sample.trigger = trigger;
    sample.step = k;
    sample.state = traj.states.row(source.t).transpose();
    sample.action = traj.actions.row(source.t).transpose();
    sample.next_state = traj.states.row(trigger.t).transpose();
    found.push_back(std::move(sample));
  }

  for (const RetrievedSample& sample : found) {
    retrieved_ids_.insert(sample.source);
    // Append the cached latent so expert-side rows are bit-identical to what
    // the same state produced as a query.
    const Matrix& latents = offline_latents_.at(sample.source.traj_id);
    retrieved_extra_.emplace_back(sample.source,
                                  Vector(latents.row(sample.source.t).transpose()));
  }
  report_.steps.push_back(step_report);
  return found;
}

RetrievedSet run_retrieval(const Dataset& expert, const Dataset& offline,
                           const WorldModel& wm, const RetrievalConfig& config,
                           SearchReport* report) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  RetrievedSet set;
  set.per_step.assign(static_cast<std::size_t>(config.steps), {});
  if (offline.empty()) {
    if (report != nullptr) {
      *report = SearchReport{};
    }
    return set;
  }
  RetrievalEngine engine(expert, offline, wm, config);
  for (int k = 0; k < config.steps; ++k) {
    set.per_step[static_cast<std::size_t>(k)] = engine.step();
  }
  SearchReport full = engine.report();
  full.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (report != nullptr) {
    *report = std::move(full);
  }
  return set;
}

namespace {

json vec_to_json(const Vector& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Vector vec_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())).eval();
}

}  // namespace

void save_retrieved(const RetrievedSet& set, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write retrieved set: " + path.string());
  }
  out << json{{"format", kRetrievedFormat}, {"steps", set.per_step.size()}}.dump() << "\n";
  for (const auto& step : set.per_step) {
    for (const auto& s : step) {
      json j;
      j["step"] = s.step;
      j["source"] = {{"traj_id", s.source.traj_id}, {"t", s.source.t}};
      j["trigger"] = {{"traj_id", s.trigger.traj_id}, {"t", s.trigger.t}};
      j["state"] = vec_to_json(s.state);
      j["action"] = vec_to_json(s.action);
      j["next_state"] = vec_to_json(s.next_state);
      out << j.dump() << "\n";
    }
  }
}

RetrievedSet load_retrieved(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open retrieved set: " + path.string());
  }
  std::string line;
  int line_no = 0;
  RetrievedSet set;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (line_no == 1) {
      if (j.value("format", "") != kRetrievedFormat) {
        throw SchemaError("unexpected retrieved-set format tag");
      }
      set.per_step.assign(j.at("steps").get<std::size_t>(), {});
      continue;
    }
    try {
      RetrievedSample s;
      s.step = j.at("step").get<int>();
      s.source = StateId{j.at("source").at("traj_id").get<std::int64_t>(),
                         j.at("source").at("t").get<Index>()};
      s.trigger = StateId{j.at("trigger").at("traj_id").get<std::int64_t>(),
                          j.at("trigger").at("t").get<Index>()};
      s.state = vec_from_json(j.at("state"));
      s.action = vec_from_json(j.at("action"));
      s.next_state = vec_from_json(j.at("next_state"));
      if (s.step < 0 || static_cast<std::size_t>(s.step) >= set.per_step.size()) {
        throw SchemaError("line " + std::to_string(line_no) + ": step out of range");
      }
      set.per_step[static_cast<std::size_t>(s.step)].push_back(std::move(s));
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (set.per_step.empty() && line_no == 0) {
    throw SchemaError("retrieved-set file has no header: " + path.string());
  }
  return set;
}

}  // namespace sbr
