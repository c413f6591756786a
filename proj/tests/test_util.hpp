#pragma once

// Shared fixtures for the model/retrieval/policy suites.

#include "sbr/dataset.hpp"
#include "sbr/mlp.hpp"
#include "sbr/rng.hpp"
#include "sbr/world_model.hpp"

#include <vector>

namespace testutil {

using namespace sbr;

// 1-D-state trajectory from a list of scalars; actions are 1-D placeholders
// a_t = s_{t+1} - s_t so the data stays physically sensible.
inline Trajectory scalar_traj(std::int64_t id, Source source,
                              const std::vector<double>& states) {
  Trajectory t;
  t.traj_id = id;
  t.source = source;
  t.states = Matrix(static_cast<Index>(states.size()), 1);
  for (std::size_t i = 0; i < states.size(); ++i) {
    t.states(static_cast<Index>(i), 0) = states[i];
  }
  t.actions = Matrix(static_cast<Index>(states.size()) - 1, 1);
  for (std::size_t i = 0; i + 1 < states.size(); ++i) {
    t.actions(static_cast<Index>(i), 0) = states[i + 1] - states[i];
  }
  return t;
}

// Single linear layer holding a fixed matrix (identity tests).
inline ParamStore fixed_linear(const Matrix& w) {
  ParamStore p;
  p.add("W0", TensorBuf::from_matrix(w));
  p.add("b0", TensorBuf::from_vector(Vector::Zero(w.rows())));
  return p;
}

// Finite-difference check of the recorded world-model loss against its own
// backward pass; the numeric side touches only forward evaluations. Under
// stop-gradient semantics the encoder targets are data, so the probed
// function pins them at the base parameters.
inline double fd_check_wm(WorldModel& wm, const WmBatch& batch, double eps) {
  Tape tape;
  const WmLossGraph g = wm_loss_graph(tape, wm, batch);
  tape.backward(g.loss);
  const ParamStore enc_grads = collect_grads(tape, g.enc, wm.encoder_params());
  const ParamStore dyn_grads = collect_grads(tape, g.dyn, wm.dynamics_params());
  const ParamStore dec_grads = collect_grads(tape, g.dec, wm.decoder_params());

  const std::vector<Matrix> targets = wm_loss_targets(wm, batch);
  WmLossOptions options;
  options.fixed_targets = &targets;
  const auto loss_value = [&]() {
    Tape t2;
    return t2.value(wm_loss_graph(t2, wm, batch, options).loss)(0, 0);
  };

  double worst = 0.0;
  const auto sweep = [&](ParamStore& params, const ParamStore& analytic) {
    for (auto& [name, tensor] : params) {
      Matrix& w = tensor.values();
      const Matrix& a = analytic.at(name).values();
      for (Index r = 0; r < w.rows(); ++r) {
        for (Index c = 0; c < w.cols(); ++c) {
          const double saved = w(r, c);
          w(r, c) = saved + eps;
          const double up = loss_value();
          w(r, c) = saved - eps;
          const double down = loss_value();
          w(r, c) = saved;
          const double numeric = (up - down) / (2.0 * eps);
          const double denom = std::max(1e-8, std::abs(a(r, c)) + std::abs(numeric));
          worst = std::max(worst, std::abs(a(r, c) - numeric) / denom);
        }
      }
    }
  };
  sweep(wm.encoder_params(), enc_grads);
  sweep(wm.dynamics_params(), dyn_grads);
  sweep(wm.decoder_params(), dec_grads);
  return worst;
}

// Small world model with random nets for loss/grad tests.
inline WorldModel tiny_wm(Index state_dim, Index action_dim, Index latent_dim, int horizon,
                          RolloutMode mode, std::uint64_t seed,
                          bool recon_from_encoder = false) {
  WmConfig cfg;
  cfg.latent_dim = latent_dim;
  cfg.horizon = horizon;
  cfg.decay = 0.9;
  cfg.rollout_mode = mode;
  cfg.recon_from_encoder = recon_from_encoder;
  cfg.enc_hidden = {6};
  cfg.dyn_hidden = {6};
  cfg.dec_hidden = {6};
  cfg.seed = seed;
  return WorldModel::make(cfg, state_dim, action_dim,
                          NormStats::identity(state_dim, action_dim));
}

inline WmBatch random_batch(Index batch_n, Index state_dim, Index action_dim, int horizon,
                            std::uint64_t seed) {
  Rng rng(seed);
  WmBatch batch;
  for (int t = 0; t <= horizon + 1; ++t) {
    Matrix s(batch_n, state_dim);
    for (Index r = 0; r < batch_n; ++r) {
      for (Index c = 0; c < state_dim; ++c) {
        s(r, c) = rng.normal();
      }
    }
    batch.states.push_back(std::move(s));
  }
  for (int t = 0; t <= horizon; ++t) {
    Matrix a(batch_n, action_dim);
    for (Index r = 0; r < batch_n; ++r) {
      for (Index c = 0; c < action_dim; ++c) {
        a(r, c) = rng.normal();
      }
    }
    batch.actions.push_back(std::move(a));
  }
  return batch;
}

}  // namespace testutil
