#pragma once

#include "sbr/dataset.hpp"
#include "sbr/envs.hpp"
#include "sbr/mlp.hpp"
#include "sbr/retrieval.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace sbr {

enum class BcMode { Sbr, BcExp, BcAll };

std::string to_string(BcMode mode);
BcMode bc_mode_from_string(const std::string& s);

struct BcConfig {
  BcMode mode = BcMode::Sbr;
  double decay = 0.9;  // weight decay per retrieval step, beta^k
  std::vector<Index> hidden{64, 64};
  Activation activation = Activation::Tanh;
  // Freeze log-std at 0; the Gaussian likelihood then reduces to scaled MSE.
  bool fixed_unit_std = false;
  double lr = 1e-3;
  // Cosine-decay the learning rate to ~1% over the run, so training ends at
  // a converged point instead of whatever the last oscillation produced.
  bool lr_decay = true;
  int batch_size = 64;
  int epochs = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EvalConfig {
  int episodes = 50;
  int horizon = 120;
  double discount = 0.99;  // the MDP discount
  std::uint64_t seed = 0;

  void validate() const;
};

// Diagonal-Gaussian policy over normalized actions: mean from an MLP on the
// normalized state, one learned log-std per action dimension (clamped to
// [-5, 2]). act() maps raw state -> raw mean action.
class Policy {
 public:
  static Policy make(const BcConfig& config, Index state_dim, Index action_dim,
                     NormStats norm);

  Vector act(const Vector& raw_state) const;
  Vector sample_action(const Vector& raw_state, Rng& rng) const;

  // Log density of the normalized action under the policy's Gaussian.
  double log_prob(const Vector& raw_state, const Vector& raw_action) const;

  Index state_dim() const { return state_dim_; }
  Index action_dim() const { return action_dim_; }
  const MlpSpec& spec() const { return spec_; }
  // Includes the MLP weights and the "log_std" entry.
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const NormStats& norm() const { return norm_; }
  bool fixed_unit_std() const { return fixed_unit_std_; }

  Vector log_std() const { return params_.at("log_std").as_vector(); }

 private:
  MlpSpec spec_;
  ParamStore params_;
  NormStats norm_;
  Index state_dim_ = 0;
  Index action_dim_ = 0;
  bool fixed_unit_std_ = false;
};

// One weighted behavior-cloning sample in raw units.
struct BcSample {
  Vector state;
  Vector action;
  double weight = 1.0;
};

// Mean over the batch of weight * (-log_prob). Returns 0 for an all-zero
// weight batch (training skips those with a warning).
double bc_loss(const Policy& policy, const std::vector<BcSample>& batch);

// Recorded version for training/grad checks: states/actions already
// normalized, weights fixed.
Var bc_loss_graph(Tape& tape, const MlpSpec& spec, const LeafMap& leaves,
                  bool fixed_unit_std, const Matrix& states_norm,
                  const Matrix& actions_norm, const Vector& weights);

struct BcTrainLog {
  std::vector<double> epoch_loss;
  std::vector<double> batch_loss;  // every optimizer step, in order
  std::size_t sample_count = 0;
  std::size_t dropped_zero_weight = 0;
};

// Weighted behavior cloning. Mode picks the stream: expert only (BcExp),
// expert + retrieved with per-step decay (Sbr), or expert + all offline at
// weight 1 (BcAll). Zero-weight samples are dropped before shuffling, so an
// empty/zero-weight retrieved set reproduces BcExp exactly.
std::pair<Policy, BcTrainLog> train_policy(const Dataset& expert,
                                           const RetrievedSet* retrieved,
                                           const Dataset* offline_all,
                                           const NormStats& norm, const BcConfig& config);

struct EvalReport {
  double mean_return = 0.0;
  double std_return = 0.0;
  double mean_discounted = 0.0;
  double success_rate = 0.0;
  int episodes = 0;

  nlohmann::json to_json() const;
};

EvalReport evaluate_policy(const Policy& policy, const PointMazeSpec& env_spec,
                           const EvalConfig& config);

// 100 * (policy - random) / (expert - random)
double normalized_score(double policy_return, double random_return, double expert_return);

void save_policy(const Policy& policy, const std::filesystem::path& path,
                 std::uint64_t seed);
Policy load_policy(const std::filesystem::path& path);

}  // namespace sbr
