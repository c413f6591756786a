#pragma once

#include "sbr/common.hpp"
#include "sbr/tensor.hpp"

#include <map>
#include <string>
#include <utility>

namespace sbr {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction. Moments are zero-initialized against a
// template store; step() asserts the same names and shapes ever after.
class AdamState {
 public:
  AdamState(const ParamStore& like, AdamConfig cfg);

  // Throws DivergenceError naming the parameter if a gradient is non-finite.
  void step(ParamStore& params, const ParamStore& grads);

  // For schedules; takes effect on the next step.
  void set_lr(double lr) { cfg_.lr = lr; }

  long step_count() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::map<std::string, std::pair<Matrix, Matrix>> moments_;  // (m, v)
};

inline void adam_step(ParamStore& params, const ParamStore& grads, AdamState& state) {
  state.step(params, grads);
}

}  // namespace sbr
