#include "sbr/policy.hpp"

#include "sbr/adam.hpp"
#include "sbr/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>
#include <numeric>

namespace sbr {

namespace {

constexpr double kLogStdMin = -5.0;
constexpr double kLogStdMax = 2.0;
constexpr double kHalfLog2Pi = 0.5 * 1.8378770664093453;  // 0.5 * ln(2*pi)

std::vector<Index> policy_widths(Index state_dim, const std::vector<Index>& hidden,
                                 Index action_dim) {
  std::vector<Index> widths{state_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(action_dim);
  return widths;
}

}  // namespace

std::string to_string(BcMode mode) {
  switch (mode) {
    case BcMode::Sbr: return "sbr";
    case BcMode::BcExp: return "bc_exp";
    case BcMode::BcAll: return "bc_all";
  }
  return "?";
}

BcMode bc_mode_from_string(const std::string& s) {
  if (s == "sbr") return BcMode::Sbr;
  if (s == "bc_exp") return BcMode::BcExp;
  if (s == "bc_all") return BcMode::BcAll;
  throw ConfigError("unknown policy mode '" + s + "'");
}

void BcConfig::validate() const {
  if (!(decay > 0.0) || decay > 1.0) {
    throw ConfigError("bc decay must be in (0, 1]");
  }
  if (!(lr > 0.0) || batch_size < 1 || epochs < 0) {
    throw ConfigError("invalid bc optimizer settings");
  }
}

void EvalConfig::validate() const {
  if (episodes < 1 || horizon < 1) {
    throw ConfigError("eval episodes and horizon must be >= 1");
  }
  if (discount < 0.0 || discount >= 1.0) {
    throw ConfigError("discount must be in [0, 1)");
  }
}

Policy Policy::make(const BcConfig& config, Index state_dim, Index action_dim,
                    NormStats norm) {
  config.validate();
  Policy p;
  p.spec_ = MlpSpec{policy_widths(state_dim, config.hidden, action_dim),
                    config.activation};
  p.params_ = init_mlp_params(p.spec_, derive_seed(config.seed, "policy_init"));
  p.params_.add("log_std", TensorBuf::from_vector(Vector::Zero(action_dim)));
  p.norm_ = std::move(norm);
  p.state_dim_ = state_dim;
  p.action_dim_ = action_dim;
  p.fixed_unit_std_ = config.fixed_unit_std;
  return p;
}

namespace {

// The MLP weights without the log-std head.
ParamStore mlp_only(const ParamStore& params) {
  ParamStore out;
  for (const auto& [name, tensor] : params) {
    if (name != "log_std") {
      out.add(name, tensor);
    }
  }
  return out;
}

}  // namespace

Vector Policy::act(const Vector& raw_state) const {
  if (raw_state.size() != state_dim_) {
    throw DimensionError("act: state dim " + std::to_string(raw_state.size()) + " != " +
                         std::to_string(state_dim_));
  }
  const Matrix in = norm_.normalize_state(raw_state).transpose();
  const Vector mean_norm = mlp_forward(spec_, mlp_only(params_), in).row(0).transpose();
  return norm_.denormalize_action(mean_norm);
}

Vector Policy::sample_action(const Vector& raw_state, Rng& rng) const {
  const Matrix in = norm_.normalize_state(raw_state).transpose();
  const Vector mean_norm = mlp_forward(spec_, mlp_only(params_), in).row(0).transpose();
  const Vector sigma = log_std().array().exp();
  Vector sample(action_dim_);
  for (Index d = 0; d < action_dim_; ++d) {
    sample(d) = mean_norm(d) + sigma(d) * rng.normal();
  }
  return norm_.denormalize_action(sample);
}

double Policy::log_prob(const Vector& raw_state, const Vector& raw_action) const {
  if (raw_action.size() != action_dim_) {
    throw DimensionError("log_prob: action dim " + std::to_string(raw_action.size()) +
                         " != " + std::to_string(action_dim_));
  }
  const Matrix in = norm_.normalize_state(raw_state).transpose();
  const Vector mean = mlp_forward(spec_, mlp_only(params_), in).row(0).transpose();
  const Vector a = norm_.normalize_action(raw_action);
  const Vector ls = log_std();
  double acc = 0.0;
  for (Index d = 0; d < action_dim_; ++d) {
    const double z = (a(d) - mean(d)) * std::exp(-ls(d));
    acc += -0.5 * z * z - ls(d) - kHalfLog2Pi;
  }
  return acc;
}

double bc_loss(const Policy& policy, const std::vector<BcSample>& batch) {
  if (batch.empty()) {
    throw ContractError("bc_loss on an empty batch");
  }
  double weight_sum = 0.0;
  for (const auto& s : batch) {
    if (s.weight < 0.0) {
      throw ContractError("bc_loss: negative sample weight");
    }
    weight_sum += s.weight;
  }
  if (weight_sum == 0.0) {
    log_warn("bc_loss: batch with all-zero weights");
    return 0.0;
  }
  double acc = 0.0;
  for (const auto& s : batch) {
    acc += s.weight * (-policy.log_prob(s.state, s.action));
  }
  return acc / static_cast<double>(batch.size());
}

Var bc_loss_graph(Tape& tape, const MlpSpec& spec, const LeafMap& leaves,
                  bool fixed_unit_std, const Matrix& states_norm,
                  const Matrix& actions_norm, const Vector& weights) {
  const Index batch_n = states_norm.rows();
  const Index action_dim = actions_norm.cols();
  if (actions_norm.rows() != batch_n || weights.size() != batch_n) {
    throw ContractError("bc_loss_graph: ragged batch");
  }
  const Var mean = mlp_forward_graph(tape, spec, leaves, tape.constant(states_norm));
  const Var diff = tape.constant(actions_norm) - mean;
  const Var sq = square_elements(diff);

  Var log_std = leaves.at("log_std");
  if (fixed_unit_std) {
    log_std = stop_gradient(log_std);
  }
  const Var inv_var = exp_elements(scale(log_std, -2.0));
  const Var quad = row_sums(mul_row_vector(sq, inv_var));  // [B,1]
  // -log pi = 0.5*quad + sum(log_std) + (d/2) log(2*pi)
  Var nll = scale(quad, 0.5);
  nll = add_broadcast_scalar(nll, sum_all(log_std));
  nll = add_scalar(nll, static_cast<double>(action_dim) * kHalfLog2Pi);
  return scale(dot_with(nll, weights), 1.0 / static_cast<double>(batch_n));
}

std::pair<Policy, BcTrainLog> train_policy(const Dataset& expert,
                                           const RetrievedSet* retrieved,
                                           const Dataset* offline_all,
                                           const NormStats& norm, const BcConfig& config) {
  config.validate();
  if (expert.empty()) {
    throw ContractError("train_policy: expert data is empty");
  }

  // Canonical sample stream: expert transitions in (traj_id, t) order, then
  // mode-specific extras. Zero-weight samples never enter the stream.
  struct Raw {
    const Matrix* states;
    const Matrix* actions;
    Index row;
    double weight;
  };
  std::vector<Raw> stream;
  BcTrainLog log;
  std::vector<const Trajectory*> expert_trajs;
  for (const auto& t : expert.trajectories()) {
    expert_trajs.push_back(&t);
  }
  std::sort(expert_trajs.begin(), expert_trajs.end(),
            [](const Trajectory* a, const Trajectory* b) { return a->traj_id < b->traj_id; });
  for (const Trajectory* t : expert_trajs) {
    for (Index r = 0; r < t->length(); ++r) {
      stream.push_back(Raw{&t->states, &t->actions, r, 1.0});
    }
  }

  // deque: stable addresses while the stream grows
  std::deque<std::pair<Matrix, Matrix>> retained;
  if (config.mode == BcMode::Sbr && retrieved != nullptr) {
    for (const auto& step_samples : retrieved->per_step) {
      for (const auto& s : step_samples) {
        const double w = std::pow(config.decay, static_cast<double>(s.step));
        if (w == 0.0) {
          ++log.dropped_zero_weight;
          continue;
        }
        retained.emplace_back(s.state.transpose(), s.action.transpose());
        stream.push_back(Raw{&retained.back().first, &retained.back().second, 0, w});
      }
    }
  } else if (config.mode == BcMode::BcAll) {
    if (offline_all == nullptr) {
      throw ContractError("bc_all mode needs the offline dataset");
    }
    std::vector<const Trajectory*> offline_trajs;
    for (const auto& t : offline_all->trajectories()) {
      offline_trajs.push_back(&t);
    }
    std::sort(offline_trajs.begin(), offline_trajs.end(),
              [](const Trajectory* a, const Trajectory* b) { return a->traj_id < b->traj_id; });
    for (const Trajectory* t : offline_trajs) {
      for (Index r = 0; r < t->length(); ++r) {
        stream.push_back(Raw{&t->states, &t->actions, r, 1.0});
      }
    }
  }
  log.sample_count = stream.size();

  Policy policy = Policy::make(config, expert.state_dim(), expert.action_dim(), norm);

  // Pre-normalized flat buffers.
  Matrix states_norm(static_cast<Index>(stream.size()), expert.state_dim());
  Matrix actions_norm(static_cast<Index>(stream.size()), expert.action_dim());
  Vector weights(static_cast<Index>(stream.size()));
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const Raw& raw = stream[i];
    states_norm.row(static_cast<Index>(i)) =
        norm.normalize_state(raw.states->row(raw.row).transpose()).transpose();
    actions_norm.row(static_cast<Index>(i)) =
        norm.normalize_action(raw.actions->row(raw.row).transpose()).transpose();
    weights(static_cast<Index>(i)) = raw.weight;
  }

  AdamState opt(policy.params(), {.lr = config.lr});
  Rng shuffle_rng(derive_seed(config.seed, "bc_shuffle"));
  std::vector<Index> order(stream.size());
  std::iota(order.begin(), order.end(), Index{0});

  const std::size_t batches_per_epoch =
      (order.size() + static_cast<std::size_t>(config.batch_size) - 1) /
      static_cast<std::size_t>(config.batch_size);
  const double total_steps =
      static_cast<double>(batches_per_epoch) * static_cast<double>(config.epochs);
  std::size_t global_step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t offset = 0; offset < order.size();
         offset += static_cast<std::size_t>(config.batch_size)) {
      const Index count = static_cast<Index>(
          std::min<std::size_t>(static_cast<std::size_t>(config.batch_size),
                                order.size() - offset));
      Matrix bs(count, states_norm.cols());
      Matrix ba(count, actions_norm.cols());
      Vector bw(count);
      for (Index i = 0; i < count; ++i) {
        const Index src = order[offset + static_cast<std::size_t>(i)];
        bs.row(i) = states_norm.row(src);
        ba.row(i) = actions_norm.row(src);
        bw(i) = weights(src);
      }
      if (bw.sum() == 0.0) {
        log_warn("bc training: skipping all-zero-weight batch");
        continue;
      }

      Tape tape;
      const LeafMap leaves = store_leaves(tape, policy.params());
      const Var loss =
          bc_loss_graph(tape, policy.spec(), leaves, policy.fixed_unit_std(), bs, ba, bw);
      const double loss_value = tape.value(loss)(0, 0);
      if (!std::isfinite(loss_value)) {
        throw DivergenceError("policy training diverged at epoch " + std::to_string(epoch) +
                              ", batch " + std::to_string(batches));
      }
      tape.backward(loss);
      const ParamStore grads = collect_grads(tape, leaves, policy.params());
      if (config.lr_decay) {
        const double frac = static_cast<double>(global_step) / std::max(1.0, total_steps);
        opt.set_lr(config.lr * (0.01 + 0.99 * 0.5 * (1.0 + std::cos(std::numbers::pi * frac))));
      }
      ++global_step;
      adam_step(policy.params(), grads, opt);
      Matrix& ls = policy.params().at("log_std").values();
      ls = ls.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);

      log.batch_loss.push_back(loss_value);
      epoch_loss += loss_value * static_cast<double>(count);
      ++batches;
    }
    log.epoch_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    log_debug("bc epoch " + std::to_string(epoch) + " loss " +
              std::to_string(log.epoch_loss.back()));
  }
  return {std::move(policy), std::move(log)};
}

nlohmann::json EvalReport::to_json() const {
  return {{"mean_return", mean_return},
          {"std_return", std_return},
          {"mean_discounted", mean_discounted},
          {"success_rate", success_rate},
          {"episodes", episodes}};
}

EvalReport evaluate_policy(const Policy& policy, const PointMazeSpec& env_spec,
                           const EvalConfig& config) {
  config.validate();
  if (env_spec.obs_dim() != policy.state_dim()) {
    throw DimensionError("evaluate: env obs dim " + std::to_string(env_spec.obs_dim()) +
                         " != policy state dim " + std::to_string(policy.state_dim()));
  }
  const RolloutStats stats = run_rollouts(
      env_spec,
      [&policy](std::uint64_t) {
        return [&policy](const Vector& obs) { return policy.act(obs); };
      },
      config.episodes, config.horizon, config.discount, config.seed);
  EvalReport report;
  report.mean_return = stats.mean_return;
  report.std_return = stats.std_return;
  report.mean_discounted = stats.mean_discounted;
  report.success_rate = stats.success_rate;
  report.episodes = config.episodes;
  return report;
}

double normalized_score(double policy_return, double random_return, double expert_return) {
  if (std::abs(expert_return - random_return) < 1e-9) {
    throw ContractError("normalized_score: expert and random returns coincide");
  }
  return 100.0 * (policy_return - random_return) / (expert_return - random_return);
}

void save_policy(const Policy& policy, const std::filesystem::path& path,
                 std::uint64_t seed) {
  nlohmann::json meta;
  meta["kind"] = "policy";
  meta["widths"] = policy.spec().widths;
  meta["activation"] = policy.spec().activation == Activation::Tanh ? "tanh" : "relu";
  meta["fixed_unit_std"] = policy.fixed_unit_std();
  const auto vec = [](const Vector& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  meta["norm"] = {{"state_mean", vec(policy.norm().state_mean)},
                  {"state_std", vec(policy.norm().state_std)},
                  {"action_mean", vec(policy.norm().action_mean)},
                  {"action_std", vec(policy.norm().action_std)}};
  save_checkpoint(path, meta, policy.params(), seed);
}

Policy load_policy(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.meta.value("kind", "") != "policy") {
    throw SchemaError("checkpoint is not a policy: " + path.string());
  }
  const auto widths = ckpt.meta.at("widths").get<std::vector<Index>>();
  BcConfig config;
  config.hidden.assign(widths.begin() + 1, widths.end() - 1);
  config.activation = ckpt.meta.at("activation").get<std::string>() == "tanh"
                          ? Activation::Tanh
                          : Activation::Relu;
  config.fixed_unit_std = ckpt.meta.at("fixed_unit_std").get<bool>();
  const auto vec = [](const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())).eval();
  };
  NormStats norm;
  const auto& nj = ckpt.meta.at("norm");
  norm.state_mean = vec(nj.at("state_mean").get<std::vector<double>>());
  norm.state_std = vec(nj.at("state_std").get<std::vector<double>>());
  norm.action_mean = vec(nj.at("action_mean").get<std::vector<double>>());
  norm.action_std = vec(nj.at("action_std").get<std::vector<double>>());

  Policy policy = Policy::make(config, widths.front(), widths.back(), norm);
  policy.params() = ckpt.params;
  return policy;
}

}  // namespace sbr
