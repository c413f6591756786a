#pragma once

#include "sbr/dataset.hpp"
#include "sbr/mlp.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace sbr {

// How the latent rollout inside the multi-step loss is fed: open_loop chains
// the dynamics predictor on its own outputs, teacher_forced re-encodes the
// observed state at every step.
enum class RolloutMode { OpenLoop, TeacherForced };

std::string to_string(RolloutMode mode);
RolloutMode rollout_mode_from_string(const std::string& s);

struct WmConfig {
  Index latent_dim = 16;
  int horizon = 3;      // H
  double decay = 0.9;   // per-step weight inside the loss
  RolloutMode rollout_mode = RolloutMode::OpenLoop;
  // In open_loop the reconstruction term uses the rolled-out latent; this
  // flag switches it to the encoder output instead.
  bool recon_from_encoder = false;
  // Identity encoder on normalized states; no networks, no training.
  bool passthrough = false;
  std::vector<Index> enc_hidden{64, 64};
  std::vector<Index> dyn_hidden{64, 64};
  std::vector<Index> dec_hidden{64, 64};
  Activation activation = Activation::Tanh;
  double lr = 1e-3;
  int batch_size = 64;
  int epochs = 50;
  std::uint64_t seed = 0;

  void validate() const;
};

// Encoder, latent dynamics predictor, and decoder over normalized states.
// The public mapping functions take and return raw (environment-unit)
// states; normalization is applied internally.
class WorldModel {
 public:
  static WorldModel make(const WmConfig& config, Index state_dim, Index action_dim,
                         NormStats norm);
  static WorldModel make_passthrough(Index state_dim, Index action_dim, NormStats norm);
  // Identity encoder with identity normalization; the similarity and
  // retrieval test fixtures run directly on raw state values.
  static WorldModel identity(Index state_dim, Index action_dim);

  Vector encode(const Vector& state) const;
  Matrix encode_batch(const Matrix& states) const;  // rows = states
  Vector predict_latent(const Vector& latent, const Vector& action) const;
  Vector decode(const Vector& latent) const;

  bool passthrough() const { return config_.passthrough; }
  Index state_dim() const { return state_dim_; }
  Index action_dim() const { return action_dim_; }
  Index latent_dim() const;

  const WmConfig& config() const { return config_; }
  const NormStats& norm() const { return norm_; }

  const MlpSpec& encoder_spec() const { return enc_spec_; }
  const MlpSpec& dynamics_spec() const { return dyn_spec_; }
  const MlpSpec& decoder_spec() const { return dec_spec_; }
  ParamStore& encoder_params() { return enc_params_; }
  ParamStore& dynamics_params() { return dyn_params_; }
  ParamStore& decoder_params() { return dec_params_; }
  const ParamStore& encoder_params() const { return enc_params_; }
  const ParamStore& dynamics_params() const { return dyn_params_; }
  const ParamStore& decoder_params() const { return dec_params_; }

 private:
  WorldModel() = default;

  WmConfig config_;
  NormStats norm_;
  Index state_dim_ = 0;
  Index action_dim_ = 0;
  MlpSpec enc_spec_, dyn_spec_, dec_spec_;
  ParamStore enc_params_, dyn_params_, dec_params_;
};

// A batch of aligned windows in normalized space: states[t] is [B, ds] for
// t = 0..H+1, actions[t] is [B, da] for t = 0..H.
struct WmBatch {
  std::vector<Matrix> states;
  std::vector<Matrix> actions;
};

struct WmLossGraph {
  Var loss;
  LeafMap enc, dyn, dec;
};

struct WmLossOptions {
  // Replace every stop-gradient target with a constant holding the value the
  // graph just computed (the substitution check).
  bool sg_targets_as_constants = false;
  // Pin the targets to externally supplied matrices, one per window step.
  // Finite-difference checks need this: under sg semantics the targets are
  // data, so the probed function must hold them at the base parameters.
  const std::vector<Matrix>* fixed_targets = nullptr;
};

// Recorded loss over one batch:
//   sum_t decay^t (||zhat_{t+1} - sg(q(s_{t+1}))||^2 + ||s_t - p(z_t)||^2) / B
// with the latent rollout controlled by config.rollout_mode.
WmLossGraph wm_loss_graph(Tape& tape, const WorldModel& wm, const WmBatch& batch,
                          const WmLossOptions& options = {});

// Encoder targets sg(q(s_{t+1})) evaluated at the current parameters, one
// matrix per window step; feed these back as fixed_targets.
std::vector<Matrix> wm_loss_targets(const WorldModel& wm, const WmBatch& batch);

// Loss value on one raw window of horizon+1 transitions: states [H+2, ds],
// actions [H+1, da]. Throws DivergenceError on NaN.
double wm_loss(const WorldModel& wm, const Matrix& window_states,
               const Matrix& window_actions);

struct WmTrainLog {
  std::vector<double> epoch_loss;
  Index window_count = 0;
};

// Representation learning over the union of both datasets; seeded and
// deterministic. Normalization stats are computed here over the union.
std::pair<WorldModel, WmTrainLog> train_world_model(const Dataset& expert,
                                                    const Dataset& offline,
                                                    const WmConfig& config);

// CSV with header traj_id,t,source,z_0..z_{d-1}; values at full precision.
void export_embeddings(const WorldModel& wm, const Dataset& dataset,
                       const std::filesystem::path& path);

void save_world_model(const WorldModel& wm, const std::filesystem::path& path);
WorldModel load_world_model(const std::filesystem::path& path);

}  // namespace sbr
