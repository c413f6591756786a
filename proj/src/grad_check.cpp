#include "sbr/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace sbr {

double graph_loss_value(const ParamStore& params, const GraphLossFn& loss_fn) {
  Tape tape;
  const LeafMap leaves = store_leaves(tape, params);
  const Var loss = loss_fn(tape, leaves);
  const Matrix& v = tape.value(loss);
  if (v.rows() != 1 || v.cols() != 1) {
    throw ContractError("graph_loss_value: loss is not scalar");
  }
  return v(0, 0);
}

ParamStore graph_loss_grads(const ParamStore& params, const GraphLossFn& loss_fn) {
  Tape tape;
  const LeafMap leaves = store_leaves(tape, params);
  const Var loss = loss_fn(tape, leaves);
  tape.backward(loss);
  return collect_grads(tape, leaves, params);
}

double grad_check(const ParamStore& params, const GraphLossFn& loss_fn, double eps) {
  if (!(eps > 0.0)) {
    throw ContractError("grad_check: eps must be positive");
  }
  const ParamStore analytic = graph_loss_grads(params, loss_fn);
  double worst = 0.0;
  ParamStore work = params;
  for (const auto& [name, tensor] : params) {
    const Matrix& a = analytic.at(name).values();
    Matrix& w = work.at(name).values();
    for (Index r = 0; r < w.rows(); ++r) {
      for (Index c = 0; c < w.cols(); ++c) {
        const double saved = w(r, c);
        w(r, c) = saved + eps;
        const double up = graph_loss_value(work, loss_fn);
        w(r, c) = saved - eps;
        const double down = graph_loss_value(work, loss_fn);
        w(r, c) = saved;
        const double numeric = (up - down) / (2.0 * eps);
        const double denom = std::max(1e-8, std::abs(a(r, c)) + std::abs(numeric));
        worst = std::max(worst, std::abs(a(r, c) - numeric) / denom);
      }
    }
  }
  return worst;
}

}  // namespace sbr
