#include "sbr/mlp.hpp"

#include "sbr/rng.hpp"

#include <cmath>

namespace sbr {

void MlpSpec::validate() const {
  if (widths.size() < 2) {
    throw ContractError("MlpSpec needs at least 2 widths, got " +
                        std::to_string(widths.size()));
  }
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] < 1) {
      throw ContractError("MlpSpec width " + std::to_string(i) + " is " +
                          std::to_string(widths[i]) + ", must be >= 1");
    }
  }
}

std::string weight_name(Index layer) { return "W" + std::to_string(layer); }
std::string bias_name(Index layer) { return "b" + std::to_string(layer); }

ParamStore init_mlp_params(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ParamStore params;
  for (Index l = 0; l < spec.layer_count(); ++l) {
    const Index fan_in = spec.widths[static_cast<std::size_t>(l)];
    const Index fan_out = spec.widths[static_cast<std::size_t>(l) + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix w(fan_out, fan_in);
    for (Index r = 0; r < fan_out; ++r) {
      for (Index c = 0; c < fan_in; ++c) {
        w(r, c) = rng.uniform(-bound, bound);
      }
    }
    params.add(weight_name(l), TensorBuf::from_matrix(std::move(w)));
    params.add(bias_name(l), TensorBuf::from_vector(Vector::Zero(fan_out)));
  }
  return params;
}

void validate_mlp_params(const MlpSpec& spec, const ParamStore& params) {
  spec.validate();
  for (Index l = 0; l < spec.layer_count(); ++l) {
    const Index fan_in = spec.widths[static_cast<std::size_t>(l)];
    const Index fan_out = spec.widths[static_cast<std::size_t>(l) + 1];
    const Matrix& w = params.at(weight_name(l)).values();
    if (w.rows() != fan_out || w.cols() != fan_in) {
      throw DimensionError("layer " + std::to_string(l) + ": weight is [" +
                           std::to_string(w.rows()) + "," + std::to_string(w.cols()) +
                           "], spec wants [" + std::to_string(fan_out) + "," +
                           std::to_string(fan_in) + "]");
    }
    const Matrix& b = params.at(bias_name(l)).values();
    if (b.rows() != 1 || b.cols() != fan_out) {
      throw DimensionError("layer " + std::to_string(l) + ": bias width " +
                           std::to_string(b.cols()) + " != " + std::to_string(fan_out));
    }
  }
}

namespace {

void apply_activation(Matrix& x, Activation act) {
  switch (act) {
    case Activation::Tanh:
      x = x.array().tanh();
      return;
    case Activation::Relu:
      x = x.cwiseMax(0.0);
      return;
  }
}

}  // namespace

Matrix mlp_forward(const MlpSpec& spec, const ParamStore& params, const Matrix& input) {
  validate_mlp_params(spec, params);
  if (input.cols() != spec.input_width()) {
    throw DimensionError("mlp_forward: layer 0 expects input of width " +
                         std::to_string(spec.input_width()) + ", got " +
                         std::to_string(input.cols()));
  }
  Matrix x = input;
  for (Index l = 0; l < spec.layer_count(); ++l) {
    const Matrix& w = params.at(weight_name(l)).values();
    const Matrix& b = params.at(bias_name(l)).values();
    Matrix y = x * w.transpose();
    y.rowwise() += b.row(0);
    if (l + 1 < spec.layer_count()) {
      apply_activation(y, spec.activation);
    }
    x = std::move(y);
  }
  return x;
}

TensorBuf mlp_forward(const MlpSpec& spec, const ParamStore& params, const TensorBuf& input) {
  const Matrix out = mlp_forward(spec, params, input.values());
  if (input.is_vector()) {
    return TensorBuf::from_vector(out.row(0).transpose());
  }
  return TensorBuf::from_matrix(out);
}

LeafMap store_leaves(Tape& tape, const ParamStore& params) {
  LeafMap leaves;
  for (const auto& [name, tensor] : params) {
    leaves.emplace(name, tape.leaf(tensor.values()));
  }
  return leaves;
}

ParamStore collect_grads(const Tape& tape, const LeafMap& leaves, const ParamStore& like) {
  ParamStore grads;
  for (const auto& [name, tensor] : like) {
    const auto it = leaves.find(name);
    if (it == leaves.end()) {
      throw ContractError("collect_grads: no leaf for parameter '" + name + "'");
    }
    Matrix g = tape.grad(it->second);
    if (tensor.is_vector()) {
      grads.add(name, TensorBuf::from_vector(g.row(0).transpose()));
    } else {
      grads.add(name, TensorBuf::from_matrix(std::move(g)));
    }
  }
  return grads;
}

Var mlp_forward_graph(Tape& tape, const MlpSpec& spec, const LeafMap& leaves, Var input) {
  spec.validate();
  if (tape.value(input).cols() != spec.input_width()) {
    throw DimensionError("mlp_forward_graph: layer 0 expects input of width " +
                         std::to_string(spec.input_width()) + ", got " +
                         std::to_string(tape.value(input).cols()));
  }
  Var x = input;
  for (Index l = 0; l < spec.layer_count(); ++l) {
    const Var w = leaves.at(weight_name(l));
    const Var b = leaves.at(bias_name(l));
    x = linear(x, w, b);
    if (l + 1 < spec.layer_count()) {
      x = activate(x, spec.activation);
    }
  }
  return x;
}

}  // namespace sbr
