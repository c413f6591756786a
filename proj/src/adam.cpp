#include "sbr/adam.hpp"

#include <cmath>

namespace sbr {

AdamState::AdamState(const ParamStore& like, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& [name, tensor] : like) {
    const Matrix& v = tensor.values();
    moments_.emplace(name, std::make_pair(Matrix::Zero(v.rows(), v.cols()),
                                          Matrix::Zero(v.rows(), v.cols())));
  }
}

void AdamState::step(ParamStore& params, const ParamStore& grads) {
  t_ += 1;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, mv] : moments_) {
    Matrix& p = params.at(name).values();
    const Matrix& g = grads.at(name).values();
    if (g.rows() != p.rows() || g.cols() != p.cols()) {
      throw DimensionError("adam_step: gradient shape mismatch for '" + name + "'");
    }
    if (!g.allFinite()) {
      throw DivergenceError("non-finite gradient for parameter '" + name + "'");
    }
    Matrix& m = mv.first;
    Matrix& v = mv.second;
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v.array().matrix() + (1.0 - cfg_.beta2) * g.array().square().matrix();
    const auto m_hat = m.array() / bc1;
    const auto v_hat = v.array() / bc2;
    p.array() -= cfg_.lr * m_hat / (v_hat.sqrt() + cfg_.eps);
  }
}

}  // namespace sbr
