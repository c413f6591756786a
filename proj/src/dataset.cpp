#include "sbr/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace sbr {

using nlohmann::json;

std::string to_string(Source s) { return s == Source::Expert ? "expert" : "offline"; }

Source source_from_string(const std::string& s) {
  if (s == "expert") return Source::Expert;
  if (s == "offline") return Source::Offline;
  throw SchemaError("unknown trajectory source '" + s + "'");
}

std::string to_string(const StateId& id) {
  return "(" + std::to_string(id.traj_id) + "," + std::to_string(id.t) + ")";
}

void Dataset::add(Trajectory traj) {
  if (traj.actions.rows() < 1) {
    throw SchemaError("trajectory " + std::to_string(traj.traj_id) + " is empty");
  }
  if (traj.states.rows() != traj.actions.rows() + 1) {
    throw SchemaError("trajectory " + std::to_string(traj.traj_id) + ": " +
                      std::to_string(traj.states.rows()) + " states vs " +
                      std::to_string(traj.actions.rows()) + " actions");
  }
  if (traj.traj_id < 0) {
    throw SchemaError("trajectory id must be non-negative");
  }
  if (!traj.states.allFinite() || !traj.actions.allFinite()) {
    throw SchemaError("trajectory " + std::to_string(traj.traj_id) +
                      " contains non-finite values");
  }
  if (by_id_.count(traj.traj_id) > 0) {
    throw SchemaError("duplicate trajectory id " + std::to_string(traj.traj_id));
  }
  if (state_dim_ < 0) {
    state_dim_ = traj.states.cols();
    action_dim_ = traj.actions.cols();
  } else if (traj.states.cols() != state_dim_ || traj.actions.cols() != action_dim_) {
    throw SchemaError("trajectory " + std::to_string(traj.traj_id) +
                      " has inconsistent dimensions");
  }
  by_id_.emplace(traj.traj_id, trajs_.size());
  trajs_.push_back(std::move(traj));
}

Index Dataset::transition_count() const {
  Index n = 0;
  for (const auto& t : trajs_) {
    n += t.length();
  }
  return n;
}

Index Dataset::state_count() const {
  Index n = 0;
  for (const auto& t : trajs_) {
    n += t.length() + 1;
  }
  return n;
}

const Trajectory& Dataset::by_id(std::int64_t traj_id) const {
  const auto it = by_id_.find(traj_id);
  if (it == by_id_.end()) {
    throw ContractError("no trajectory with id " + std::to_string(traj_id));
  }
  return trajs_[it->second];
}

Vector Dataset::state_at(const StateId& id) const {
  const Trajectory& traj = by_id(id.traj_id);
  if (id.t < 0 || id.t > traj.length()) {
    throw ContractError("state index " + std::to_string(id.t) +
                        " out of range for trajectory " + std::to_string(id.traj_id));
  }
  return traj.states.row(id.t).transpose();
}

std::vector<StateId> Dataset::all_state_ids() const {
  std::vector<StateId> ids;
  ids.reserve(static_cast<std::size_t>(state_count()));
  // by_id_ is ordered, so this comes out sorted.
  for (const auto& [traj_id, idx] : by_id_) {
    const Index len = trajs_[idx].length();
    for (Index t = 0; t <= len; ++t) {
      ids.push_back(StateId{traj_id, t});
    }
  }
  return ids;
}

namespace {

json matrix_to_rows(const Matrix& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) {
      row.push_back(m(r, c));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix rows_to_matrix(const json& rows, const std::string& what, int line_no) {
  if (!rows.is_array() || rows.empty()) {
    throw SchemaError("line " + std::to_string(line_no) + ": " + what +
                      " must be a non-empty array");
  }
  const std::size_t cols = rows.front().is_array() ? rows.front().size() : 0;
  if (cols == 0) {
    throw SchemaError("line " + std::to_string(line_no) + ": " + what +
                      " rows must be non-empty arrays");
  }
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const json& row = rows[r];
    if (!row.is_array() || row.size() != cols) {
      throw SchemaError("line " + std::to_string(line_no) + ": ragged " + what);
    }
    for (std::size_t c = 0; c < cols; ++c) {
      if (!row[c].is_number()) {
        throw SchemaError("line " + std::to_string(line_no) + ": non-numeric entry in " +
                          what);
      }
      m(static_cast<Index>(r), static_cast<Index>(c)) = row[c].get<double>();
    }
  }
  return m;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open dataset: " + path.string());
  }
  std::string line;
  int line_no = 0;
  Dataset dataset;
  bool saw_header = false;
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
    if (!saw_header) {
      if (!j.is_object() || j.value("format", "") != kDatasetFormat) {
        throw SchemaError("line 1: expected header {\"format\":\"" +
                          std::string(kDatasetFormat) + "\"}");
      }
      saw_header = true;
      continue;
    }
    try {
      Trajectory traj;
      traj.traj_id = j.at("traj_id").get<std::int64_t>();
      traj.source = source_from_string(j.at("source").get<std::string>());
      traj.states = rows_to_matrix(j.at("states"), "states", line_no);
      traj.actions = rows_to_matrix(j.at("actions"), "actions", line_no);
      dataset.add(std::move(traj));
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!saw_header) {
    throw SchemaError("dataset file has no header line: " + path.string());
  }
  return dataset;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot open dataset for writing: " + path.string());
  }
  out << json{{"format", kDatasetFormat}}.dump() << "\n";
  for (const auto& traj : dataset.trajectories()) {
    json j;
    j["traj_id"] = traj.traj_id;
    j["source"] = to_string(traj.source);
    j["states"] = matrix_to_rows(traj.states);
    j["actions"] = matrix_to_rows(traj.actions);
    out << j.dump() << "\n";
  }
  if (!out) {
    throw IoError("short write on dataset: " + path.string());
  }
}

std::vector<Window> windows(const Dataset& dataset, Index horizon) {
  return windows(std::vector<const Dataset*>{&dataset}, horizon);
}

std::vector<Window> windows(const std::vector<const Dataset*>& datasets, Index horizon) {
  if (horizon < 0) {
    throw ContractError("windows: horizon must be >= 0");
  }
  std::vector<const Trajectory*> trajs;
  for (const Dataset* d : datasets) {
    for (const auto& t : d->trajectories()) {
      trajs.push_back(&t);
    }
  }
  std::sort(trajs.begin(), trajs.end(),
            [](const Trajectory* a, const Trajectory* b) { return a->traj_id < b->traj_id; });
  std::vector<Window> out;
  for (const Trajectory* traj : trajs) {
    const Index count = traj->length() - horizon;
    for (Index s = 0; s < count; ++s) {
      out.push_back(Window{traj, s});
    }
  }
  return out;
}

NormStats NormStats::identity(Index state_dim, Index action_dim) {
  NormStats n;
  n.state_mean = Vector::Zero(state_dim);
  n.state_std = Vector::Ones(state_dim);
  n.action_mean = Vector::Zero(action_dim);
  n.action_std = Vector::Ones(action_dim);
  return n;
}

Vector NormStats::normalize_state(const Vector& s) const {
  return (s - state_mean).cwiseQuotient(state_std);
}
Vector NormStats::denormalize_state(const Vector& s) const {
  return s.cwiseProduct(state_std) + state_mean;
}
Matrix NormStats::normalize_states(const Matrix& rows) const {
  return (rows.rowwise() - state_mean.transpose()).array().rowwise() /
         state_std.transpose().array();
}
Matrix NormStats::denormalize_states(const Matrix& rows) const {
  return (rows.array().rowwise() * state_std.transpose().array()).matrix().rowwise() +
         state_mean.transpose();
}
Vector NormStats::normalize_action(const Vector& a) const {
  return (a - action_mean).cwiseQuotient(action_std);
}
Vector NormStats::denormalize_action(const Vector& a) const {
  return a.cwiseProduct(action_std) + action_mean;
}
Matrix NormStats::normalize_actions(const Matrix& rows) const {
  return (rows.rowwise() - action_mean.transpose()).array().rowwise() /
         action_std.transpose().array();
}
Matrix NormStats::denormalize_actions(const Matrix& rows) const {
  return (rows.array().rowwise() * action_std.transpose().array()).matrix().rowwise() +
         action_mean.transpose();
}

namespace {

void floor_std(Vector& std_vec, const char* what) {
  for (Index i = 0; i < std_vec.size(); ++i) {
    if (std_vec(i) < 1e-6) {
      log_warn(std::string(what) + " dimension " + std::to_string(i) +
               " is (near-)constant; flooring std at 1e-6");
      std_vec(i) = 1e-6;
    }
  }
}

}  // namespace

NormStats compute_norm_stats(const std::vector<const Dataset*>& datasets) {
  Index state_dim = -1, action_dim = -1;
  Index n_states = 0, n_actions = 0;
  for (const Dataset* d : datasets) {
    if (d->empty()) {
      continue;
    }
    if (state_dim < 0) {
      state_dim = d->state_dim();
      action_dim = d->action_dim();
    } else if (d->state_dim() != state_dim || d->action_dim() != action_dim) {
      throw SchemaError("compute_norm_stats: datasets disagree on dimensions");
    }
    n_states += d->state_count();
    n_actions += d->transition_count();
  }
  if (state_dim < 0) {
    throw ContractError("compute_norm_stats: all datasets are empty");
  }

  // Accumulate in traj_id order so the result is independent of file order.
  std::vector<const Trajectory*> trajs;
  for (const Dataset* d : datasets) {
    for (const auto& traj : d->trajectories()) {
      trajs.push_back(&traj);
    }
  }
  std::sort(trajs.begin(), trajs.end(),
            [](const Trajectory* a, const Trajectory* b) { return a->traj_id < b->traj_id; });
  Vector s_sum = Vector::Zero(state_dim), s_sq = Vector::Zero(state_dim);
  Vector a_sum = Vector::Zero(action_dim), a_sq = Vector::Zero(action_dim);
  for (const Trajectory* traj : trajs) {
    s_sum += traj->states.colwise().sum().transpose();
    s_sq += traj->states.array().square().matrix().colwise().sum().transpose();
    a_sum += traj->actions.colwise().sum().transpose();
    a_sq += traj->actions.array().square().matrix().colwise().sum().transpose();
  }

  NormStats stats;
  stats.state_mean = s_sum / static_cast<double>(n_states);
  stats.action_mean = a_sum / static_cast<double>(n_actions);
  stats.state_std = (s_sq / static_cast<double>(n_states) -
                     stats.state_mean.array().square().matrix())
                        .cwiseMax(0.0)
                        .cwiseSqrt();
  stats.action_std = (a_sq / static_cast<double>(n_actions) -
                      stats.action_mean.array().square().matrix())
                         .cwiseMax(0.0)
                         .cwiseSqrt();
  floor_std(stats.state_std, "state");
  floor_std(stats.action_std, "action");
  return stats;
}

Dataset normalized(const Dataset& dataset, const NormStats& stats) {
  Dataset out;
  for (const auto& traj : dataset.trajectories()) {
    Trajectory t;
    t.traj_id = traj.traj_id;
    t.source = traj.source;
    t.states = stats.normalize_states(traj.states);
    t.actions = stats.normalize_actions(traj.actions);
    out.add(std::move(t));
  }
  return out;
}

}  // namespace sbr
