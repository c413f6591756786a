#pragma once

#include "sbr/autodiff.hpp"
#include "sbr/common.hpp"
#include "sbr/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace sbr {

// Architecture of a plain feed-forward net. widths = [in, hidden..., out];
// the activation applies to hidden layers only, the output layer is linear.
struct MlpSpec {
  std::vector<Index> widths;
  Activation activation = Activation::Tanh;

  void validate() const;
  Index input_width() const { return widths.front(); }
  Index output_width() const { return widths.back(); }
  Index layer_count() const { return static_cast<Index>(widths.size()) - 1; }
};

std::string weight_name(Index layer);
std::string bias_name(Index layer);

// Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero.
ParamStore init_mlp_params(const MlpSpec& spec, std::uint64_t seed);

// Throws DimensionError naming the first inconsistent layer.
void validate_mlp_params(const MlpSpec& spec, const ParamStore& params);

// Inference pass; rows of `input` are independent samples.
Matrix mlp_forward(const MlpSpec& spec, const ParamStore& params, const Matrix& input);
TensorBuf mlp_forward(const MlpSpec& spec, const ParamStore& params, const TensorBuf& input);

using LeafMap = std::map<std::string, Var>;

// One tracked leaf per parameter, keyed by parameter name.
LeafMap store_leaves(Tape& tape, const ParamStore& params);

// Gradients shaped like `like`; zeros for parameters the loss never touched.
ParamStore collect_grads(const Tape& tape, const LeafMap& leaves, const ParamStore& like);

// Recorded forward pass over leaves created by store_leaves.
Var mlp_forward_graph(Tape& tape, const MlpSpec& spec, const LeafMap& leaves, Var input);

}  // namespace sbr
