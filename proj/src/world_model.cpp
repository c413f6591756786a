#include "sbr/world_model.hpp"

#include "sbr/adam.hpp"
#include "sbr/checkpoint.hpp"
#include "sbr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace sbr {

std::string to_string(RolloutMode mode) {
  return mode == RolloutMode::OpenLoop ? "open_loop" : "teacher_forced";
}

RolloutMode rollout_mode_from_string(const std::string& s) {
  if (s == "open_loop") return RolloutMode::OpenLoop;
  if (s == "teacher_forced") return RolloutMode::TeacherForced;
  throw ConfigError("unknown rollout mode '" + s + "'");
}

void WmConfig::validate() const {
  if (latent_dim < 1) {
    throw ConfigError("latent_dim must be >= 1");
  }
  if (horizon < 0) {
    throw ConfigError("world model horizon must be >= 0");
  }
  if (!(decay > 0.0) || decay > 1.0) {
    throw ConfigError("world model decay must be in (0, 1]");
  }
  if (!(lr > 0.0) || batch_size < 1 || epochs < 0) {
    throw ConfigError("invalid world model optimizer settings");
  }
}

namespace {

std::vector<Index> full_widths(Index in, const std::vector<Index>& hidden, Index out) {
  std::vector<Index> widths{in};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(out);
  return widths;
}

}  // namespace

WorldModel WorldModel::make(const WmConfig& config, Index state_dim, Index action_dim,
                            NormStats norm) {
  config.validate();
  if (config.passthrough) {
    WorldModel wm = make_passthrough(state_dim, action_dim, std::move(norm));
    wm.config_ = config;
    wm.config_.passthrough = true;
    wm.config_.latent_dim = state_dim;
    return wm;
  }
  WorldModel wm;
  wm.config_ = config;
  wm.norm_ = std::move(norm);
  wm.state_dim_ = state_dim;
  wm.action_dim_ = action_dim;
  wm.enc_spec_ = MlpSpec{full_widths(state_dim, config.enc_hidden, config.latent_dim),
                         config.activation};
  wm.dyn_spec_ = MlpSpec{
      full_widths(config.latent_dim + action_dim, config.dyn_hidden, config.latent_dim),
      config.activation};
  wm.dec_spec_ = MlpSpec{full_widths(config.latent_dim, config.dec_hidden, state_dim),
                         config.activation};
  wm.enc_params_ = init_mlp_params(wm.enc_spec_, derive_seed(config.seed, "enc"));
  wm.dyn_params_ = init_mlp_params(wm.dyn_spec_, derive_seed(config.seed, "dyn"));
  wm.dec_params_ = init_mlp_params(wm.dec_spec_, derive_seed(config.seed, "dec"));
  return wm;
}

WorldModel WorldModel::make_passthrough(Index state_dim, Index action_dim, NormStats norm) {
  WorldModel wm;
  wm.config_.passthrough = true;
  wm.config_.latent_dim = state_dim;
  wm.norm_ = std::move(norm);
  wm.state_dim_ = state_dim;
  wm.action_dim_ = action_dim;
  return wm;
}

WorldModel WorldModel::identity(Index state_dim, Index action_dim) {
  return make_passthrough(state_dim, action_dim, NormStats::identity(state_dim, action_dim));
}

Index WorldModel::latent_dim() const {
  return config_.passthrough ? state_dim_ : config_.latent_dim;
}

Vector WorldModel::encode(const Vector& state) const {
  if (state.size() != state_dim_) {
    throw DimensionError("encode: state dim " + std::to_string(state.size()) +
                         " != " + std::to_string(state_dim_));
  }
  const Vector normalized = norm_.normalize_state(state);
  if (config_.passthrough) {
    return normalized;
  }
  return mlp_forward(enc_spec_, enc_params_, Matrix(normalized.transpose())).row(0).transpose();
}

Matrix WorldModel::encode_batch(const Matrix& states) const {
  if (states.cols() != state_dim_) {
    throw DimensionError("encode_batch: state dim " + std::to_string(states.cols()) +
                         " != " + std::to_string(state_dim_));
  }
  const Matrix normalized = norm_.normalize_states(states);
  if (config_.passthrough) {
    return normalized;
  }
  return mlp_forward(enc_spec_, enc_params_, normalized);
}

Vector WorldModel::predict_latent(const Vector& latent, const Vector& action) const {
  if (config_.passthrough) {
    throw ContractError("predict_latent is unavailable in passthrough mode");
  }
  if (latent.size() != config_.latent_dim || action.size() != action_dim_) {
    throw DimensionError("predict_latent: got latent dim " + std::to_string(latent.size()) +
                         ", action dim " + std::to_string(action.size()));
  }
  Matrix in(1, latent.size() + action.size());
  in << latent.transpose(), norm_.normalize_action(action).transpose();
  return mlp_forward(dyn_spec_, dyn_params_, in).row(0).transpose();
}

Vector WorldModel::decode(const Vector& latent) const {
  if (config_.passthrough) {
    if (latent.size() != state_dim_) {
      throw DimensionError("decode: latent dim mismatch in passthrough mode");
    }
    return norm_.denormalize_state(latent);
  }
  if (latent.size() != config_.latent_dim) {
    throw DimensionError("decode: latent dim " + std::to_string(latent.size()) + " != " +
                         std::to_string(config_.latent_dim));
  }
  const Vector out =
      mlp_forward(dec_spec_, dec_params_, Matrix(latent.transpose())).row(0).transpose();
  return norm_.denormalize_state(out);
}

WmLossGraph wm_loss_graph(Tape& tape, const WorldModel& wm, const WmBatch& batch,
                          const WmLossOptions& options) {
  if (wm.passthrough()) {
    throw ContractError("wm_loss_graph: passthrough model has no trainable loss");
  }
  const WmConfig& cfg = wm.config();
  const int H = cfg.horizon;
  if (static_cast<int>(batch.states.size()) != H + 2 ||
      static_cast<int>(batch.actions.size()) != H + 1) {
    throw ContractError("wm_loss_graph: batch does not cover horizon " + std::to_string(H));
  }
  const double batch_n = static_cast<double>(batch.states[0].rows());

  WmLossGraph g{Var{}, store_leaves(tape, wm.encoder_params()),
                store_leaves(tape, wm.dynamics_params()),
                store_leaves(tape, wm.decoder_params())};

  const auto encode_g = [&](const Matrix& s) {
    return mlp_forward_graph(tape, wm.encoder_spec(), g.enc, tape.constant(s));
  };
  const auto dynamics_g = [&](Var z, const Matrix& a) {
    return mlp_forward_graph(tape, wm.dynamics_spec(), g.dyn,
                             concat_cols(z, tape.constant(a)));
  };
  const auto decode_g = [&](Var z) {
    return mlp_forward_graph(tape, wm.decoder_spec(), g.dec, z);
  };
  const auto sum_sq = [&](Var v) { return sum_all(square_elements(v)); };
  const auto target_of = [&](int t, const Matrix& s_next) {
    if (options.fixed_targets != nullptr) {
      return tape.constant(options.fixed_targets->at(static_cast<std::size_t>(t)));
    }
    const Var encoded = encode_g(s_next);
    return options.sg_targets_as_constants ? tape.constant(tape.value(encoded))
                                           : stop_gradient(encoded);
  };

  Var loss;
  bool first = true;
  double weight = 1.0;
  Var z_roll = encode_g(batch.states[0]);  // z_0 in every mode
  for (int t = 0; t <= H; ++t) {
    const Matrix& s_t = batch.states[static_cast<std::size_t>(t)];
    const Matrix& s_next = batch.states[static_cast<std::size_t>(t) + 1];

    const Var z_base = (cfg.rollout_mode == RolloutMode::TeacherForced && t > 0)
                           ? encode_g(s_t)
                           : z_roll;
    const Var z_pred = dynamics_g(z_base, batch.actions[static_cast<std::size_t>(t)]);
    const Var target = target_of(t, s_next);

    Var recon_in = z_base;
    if (cfg.rollout_mode == RolloutMode::OpenLoop && cfg.recon_from_encoder && t > 0) {
      recon_in = encode_g(s_t);
    }
    const Var term = scale(
        sum_sq(z_pred - target) + sum_sq(decode_g(recon_in) - tape.constant(s_t)),
        weight / batch_n);
    loss = first ? term : loss + term;
    first = false;
    weight *= cfg.decay;

    if (cfg.rollout_mode == RolloutMode::OpenLoop) {
      z_roll = z_pred;
    }
  }
  g.loss = loss;
  return g;
}

std::vector<Matrix> wm_loss_targets(const WorldModel& wm, const WmBatch& batch) {
  std::vector<Matrix> targets;
  for (std::size_t t = 1; t < batch.states.size(); ++t) {
    targets.push_back(mlp_forward(wm.encoder_spec(), wm.encoder_params(), batch.states[t]));
  }
  return targets;
}

namespace {

WmBatch normalized_window_batch(const WorldModel& wm, const Matrix& window_states,
                                const Matrix& window_actions) {
  const int H = wm.config().horizon;
  if (window_states.rows() != H + 2 || window_actions.rows() != H + 1) {
    throw ContractError("window must hold horizon+1 transitions");
  }
  WmBatch batch;
  for (Index t = 0; t < window_states.rows(); ++t) {
    batch.states.push_back(wm.norm().normalize_states(window_states.row(t)));
  }
  for (Index t = 0; t < window_actions.rows(); ++t) {
    batch.actions.push_back(wm.norm().normalize_actions(window_actions.row(t)));
  }
  return batch;
}

}  // namespace

double wm_loss(const WorldModel& wm, const Matrix& window_states,
               const Matrix& window_actions) {
  Tape tape;
  const WmBatch batch = normalized_window_batch(wm, window_states, window_actions);
  const WmLossGraph g = wm_loss_graph(tape, wm, batch);
  const double value = tape.value(g.loss)(0, 0);
  if (!std::isfinite(value)) {
    throw DivergenceError("world model loss is not finite");
  }
  return value;
}

std::pair<WorldModel, WmTrainLog> train_world_model(const Dataset& expert,
                                                    const Dataset& offline,
                                                    const WmConfig& config) {
  config.validate();
  if (expert.empty() && offline.empty()) {
    throw ContractError("train_world_model: no data");
  }
  const NormStats stats = compute_norm_stats({&expert, &offline});
  const Index state_dim = expert.empty() ? offline.state_dim() : expert.state_dim();
  const Index action_dim = expert.empty() ? offline.action_dim() : expert.action_dim();
  WorldModel wm = WorldModel::make(config, state_dim, action_dim, stats);
  WmTrainLog log;
  if (config.passthrough) {
    return {std::move(wm), std::move(log)};
  }

  const std::vector<Window> window_list =
      windows({&expert, &offline}, static_cast<Index>(config.horizon));
  log.window_count = static_cast<Index>(window_list.size());
  if (window_list.empty()) {
    throw ContractError("train_world_model: no window of horizon " +
                        std::to_string(config.horizon) + " fits any trajectory");
  }

  // Normalized per-trajectory copies, fetched by pointer identity.
  std::map<const Trajectory*, std::pair<Matrix, Matrix>> cache;
  for (const Window& w : window_list) {
    if (cache.count(w.traj) == 0) {
      cache.emplace(w.traj, std::make_pair(stats.normalize_states(w.traj->states),
                                           stats.normalize_actions(w.traj->actions)));
    }
  }

  AdamState enc_opt(wm.encoder_params(), {.lr = config.lr});
  AdamState dyn_opt(wm.dynamics_params(), {.lr = config.lr});
  AdamState dec_opt(wm.decoder_params(), {.lr = config.lr});
  Rng shuffle_rng(derive_seed(config.seed, "wm_shuffle"));

  const int H = config.horizon;
  std::vector<std::size_t> order(window_list.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t offset = 0; offset < order.size();
         offset += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t count =
          std::min<std::size_t>(static_cast<std::size_t>(config.batch_size),
                                order.size() - offset);
      WmBatch batch;
      batch.states.assign(static_cast<std::size_t>(H) + 2, Matrix(count, state_dim));
      batch.actions.assign(static_cast<std::size_t>(H) + 1, Matrix(count, action_dim));
      for (std::size_t i = 0; i < count; ++i) {
        const Window& w = window_list[order[offset + i]];
        const auto& [ns, na] = cache.at(w.traj);
        for (int t = 0; t <= H + 1; ++t) {
          batch.states[static_cast<std::size_t>(t)].row(static_cast<Index>(i)) =
              ns.row(w.start + t);
        }
        for (int t = 0; t <= H; ++t) {
          batch.actions[static_cast<std::size_t>(t)].row(static_cast<Index>(i)) =
              na.row(w.start + t);
        }
      }

      Tape tape;
      const WmLossGraph g = wm_loss_graph(tape, wm, batch);
      const double loss = tape.value(g.loss)(0, 0);
      if (!std::isfinite(loss)) {
        throw DivergenceError("world model training diverged at epoch " +
                              std::to_string(epoch) + ", batch " + std::to_string(batches));
      }
      tape.backward(g.loss);
      const ParamStore enc_g = collect_grads(tape, g.enc, wm.encoder_params());
      const ParamStore dyn_g = collect_grads(tape, g.dyn, wm.dynamics_params());
      const ParamStore dec_g = collect_grads(tape, g.dec, wm.decoder_params());
      adam_step(wm.encoder_params(), enc_g, enc_opt);
      adam_step(wm.dynamics_params(), dyn_g, dyn_opt);
      adam_step(wm.decoder_params(), dec_g, dec_opt);

      epoch_loss += loss * static_cast<double>(count);
      ++batches;
    }
    log.epoch_loss.push_back(epoch_loss / static_cast<double>(order.size()));
    log_debug("wm epoch " + std::to_string(epoch) + " loss " +
              std::to_string(log.epoch_loss.back()));
  }
  return {std::move(wm), std::move(log)};
}

void export_embeddings(const WorldModel& wm, const Dataset& dataset,
                       const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot write embeddings: " + path.string());
  }
  out << "traj_id,t,source";
  for (Index d = 0; d < wm.latent_dim(); ++d) {
    out << ",z_" << d;
  }
  out << "\n";
  char buf[32];
  for (const auto& traj : dataset.trajectories()) {
    const Matrix latents = wm.encode_batch(traj.states);
    for (Index t = 0; t < latents.rows(); ++t) {
      out << traj.traj_id << "," << t << "," << to_string(traj.source);
      for (Index d = 0; d < latents.cols(); ++d) {
        std::snprintf(buf, sizeof(buf), "%.17g", latents(t, d));
        out << "," << buf;
      }
      out << "\n";
    }
  }
}

namespace {

nlohmann::json norm_to_json(const NormStats& n) {
  const auto vec = [](const Vector& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  return {{"state_mean", vec(n.state_mean)},
          {"state_std", vec(n.state_std)},
          {"action_mean", vec(n.action_mean)},
          {"action_std", vec(n.action_std)}};
}

NormStats norm_from_json(const nlohmann::json& j) {
  const auto vec = [](const std::vector<double>& v) {
    return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size())).eval();
  };
  NormStats n;
  n.state_mean = vec(j.at("state_mean").get<std::vector<double>>());
  n.state_std = vec(j.at("state_std").get<std::vector<double>>());
  n.action_mean = vec(j.at("action_mean").get<std::vector<double>>());
  n.action_std = vec(j.at("action_std").get<std::vector<double>>());
  return n;
}

nlohmann::json wm_config_to_json(const WmConfig& c) {
  return {{"latent_dim", c.latent_dim},
          {"horizon", c.horizon},
          {"decay", c.decay},
          {"rollout_mode", to_string(c.rollout_mode)},
          {"recon_from_encoder", c.recon_from_encoder},
          {"passthrough", c.passthrough},
          {"enc_hidden", c.enc_hidden},
          {"dyn_hidden", c.dyn_hidden},
          {"dec_hidden", c.dec_hidden},
          {"activation", c.activation == Activation::Tanh ? "tanh" : "relu"},
          {"lr", c.lr},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed}};
}

WmConfig wm_config_from_json(const nlohmann::json& j) {
  WmConfig c;
  c.latent_dim = j.at("latent_dim").get<Index>();
  c.horizon = j.at("horizon").get<int>();
  c.decay = j.at("decay").get<double>();
  c.rollout_mode = rollout_mode_from_string(j.at("rollout_mode").get<std::string>());
  c.recon_from_encoder = j.at("recon_from_encoder").get<bool>();
  c.passthrough = j.at("passthrough").get<bool>();
  c.enc_hidden = j.at("enc_hidden").get<std::vector<Index>>();
  c.dyn_hidden = j.at("dyn_hidden").get<std::vector<Index>>();
  c.dec_hidden = j.at("dec_hidden").get<std::vector<Index>>();
  c.activation = j.at("activation").get<std::string>() == "tanh" ? Activation::Tanh
                                                                 : Activation::Relu;
  c.lr = j.at("lr").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void save_world_model(const WorldModel& wm, const std::filesystem::path& path) {
  nlohmann::json meta;
  meta["kind"] = "world_model";
  meta["config"] = wm_config_to_json(wm.config());
  meta["norm"] = norm_to_json(wm.norm());
  meta["state_dim"] = wm.state_dim();
  meta["action_dim"] = wm.action_dim();
  ParamStore all = wm.encoder_params().with_prefix("enc.");
  for (const auto& [name, tensor] : wm.dynamics_params().with_prefix("dyn.")) {
    all.add(name, tensor);
  }
  for (const auto& [name, tensor] : wm.decoder_params().with_prefix("dec.")) {
    all.add(name, tensor);
  }
  save_checkpoint(path, meta, all, wm.config().seed);
}

WorldModel load_world_model(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.meta.value("kind", "") != "world_model") {
    throw SchemaError("checkpoint is not a world model: " + path.string());
  }
  const WmConfig config = wm_config_from_json(ckpt.meta.at("config"));
  const NormStats norm = norm_from_json(ckpt.meta.at("norm"));
  const Index state_dim = ckpt.meta.at("state_dim").get<Index>();
  const Index action_dim = ckpt.meta.at("action_dim").get<Index>();
  WorldModel wm = WorldModel::make(config, state_dim, action_dim, norm);
  if (!config.passthrough) {
    wm.encoder_params() = ckpt.params.strip_prefix("enc.");
    wm.dynamics_params() = ckpt.params.strip_prefix("dyn.");
    wm.decoder_params() = ckpt.params.strip_prefix("dec.");
    validate_mlp_params(wm.encoder_spec(), wm.encoder_params());
    validate_mlp_params(wm.dynamics_spec(), wm.dynamics_params());
    validate_mlp_params(wm.decoder_spec(), wm.decoder_params());
  }
  return wm;
}

}  // namespace sbr
