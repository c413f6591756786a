#pragma once

#include "sbr/mlp.hpp"
#include "sbr/tensor.hpp"

#include <functional>

namespace sbr {

// Builds the loss as a recorded graph over one leaf per parameter.
using GraphLossFn = std::function<Var(Tape&, const LeafMap&)>;

double graph_loss_value(const ParamStore& params, const GraphLossFn& loss_fn);
ParamStore graph_loss_grads(const ParamStore& params, const GraphLossFn& loss_fn);

// Max over all parameter entries of |analytic - numeric| /
// max(1e-8, |analytic| + |numeric|), numeric by central differences.
double grad_check(const ParamStore& params, const GraphLossFn& loss_fn, double eps);

}  // namespace sbr
