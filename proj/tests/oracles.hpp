#pragma once

// Independent reference implementations used only by tests. Everything here
// is written with plain scalar loops on std::vector so it shares no math code
// with the library paths it checks.

#include "sbr/mlp.hpp"
#include "sbr/tensor.hpp"

#include <cmath>
#include <cstddef>
#include <vector>

namespace oracle {

// Hand-rolled feed-forward pass; activation on hidden layers only.
inline std::vector<double> mlp_forward(const sbr::MlpSpec& spec,
                                       const sbr::ParamStore& params,
                                       const std::vector<double>& input) {
  std::vector<double> x = input;
  const std::size_t layers = spec.widths.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const sbr::Matrix& w = params.at(sbr::weight_name(static_cast<sbr::Index>(l))).values();
    const sbr::Matrix& b = params.at(sbr::bias_name(static_cast<sbr::Index>(l))).values();
    std::vector<double> y(static_cast<std::size_t>(w.rows()), 0.0);
    for (std::size_t j = 0; j < y.size(); ++j) {
      double acc = b(0, static_cast<sbr::Index>(j));
      for (std::size_t i = 0; i < x.size(); ++i) {
        acc += w(static_cast<sbr::Index>(j), static_cast<sbr::Index>(i)) * x[i];
      }
      y[j] = acc;
    }
    if (l + 1 < layers) {
      for (double& v : y) {
        v = spec.activation == sbr::Activation::Tanh ? std::tanh(v) : (v > 0.0 ? v : 0.0);
      }
    }
    x = std::move(y);
  }
  return x;
}

// One Adam step on flat scalar state, straight from the update equations.
struct ScalarAdam {
  double lr, beta1, beta2, eps;
  long t = 0;
  std::vector<double> m, v;

  explicit ScalarAdam(std::size_t n, double lr_ = 1e-3, double b1 = 0.9, double b2 = 0.999,
                      double e = 1e-8)
      : lr(lr_), beta1(b1), beta2(b2), eps(e), m(n, 0.0), v(n, 0.0) {}

  void step(std::vector<double>& params, const std::vector<double>& grads) {
    t += 1;
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i] * grads[i];
      const double m_hat = m[i] / (1.0 - std::pow(beta1, static_cast<double>(t)));
      const double v_hat = v[i] / (1.0 - std::pow(beta2, static_cast<double>(t)));
      params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
};

// Closed-form diagonal-Gaussian log density.
inline double gaussian_log_density(const std::vector<double>& x,
                                   const std::vector<double>& mean,
                                   const std::vector<double>& log_std) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double sigma = std::exp(log_std[i]);
    const double z = (x[i] - mean[i]) / sigma;
    acc += -0.5 * z * z - log_std[i] - 0.5 * std::log(2.0 * 3.14159265358979323846);
  }
  return acc;
}

}  // namespace oracle
