#include "sbr/tensor.hpp"

namespace sbr {

TensorBuf TensorBuf::from_vector(const Vector& v) {
  TensorBuf t;
  t.shape_ = {v.size()};
  t.values_ = v.transpose();
  return t;
}

TensorBuf TensorBuf::from_matrix(Matrix m) {
  TensorBuf t;
  t.shape_ = {m.rows(), m.cols()};
  t.values_ = std::move(m);
  return t;
}

TensorBuf TensorBuf::zeros(const std::vector<Index>& shape) {
  if (shape.size() == 1) {
    return from_vector(Vector::Zero(shape[0]));
  }
  if (shape.size() == 2) {
    return from_matrix(Matrix::Zero(shape[0], shape[1]));
  }
  throw DimensionError("TensorBuf supports rank 1 or 2, got rank " +
                       std::to_string(shape.size()));
}

Vector TensorBuf::as_vector() const {
  if (values_.rows() != 1) {
    throw DimensionError("TensorBuf::as_vector on a tensor with " +
                         std::to_string(values_.rows()) + " rows");
  }
  return values_.row(0).transpose();
}

void TensorBuf::check_finite(const std::string& context) const {
  if (!values_.allFinite()) {
    throw SchemaError("non-finite value in tensor '" + context + "'");
  }
}

void ParamStore::add(const std::string& name, TensorBuf tensor) {
  if (contains(name)) {
    throw ContractError("duplicate parameter name '" + name + "'");
  }
  entries_.emplace(name, std::move(tensor));
}

TensorBuf& ParamStore::at(const std::string& name) {
  const auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw ContractError("unknown parameter '" + name + "'");
  }
  return it->second;
}

const TensorBuf& ParamStore::at(const std::string& name) const {
  const auto it = entries_.find(name);
  if (it == entries_.end()) {
    throw ContractError("unknown parameter '" + name + "'");
  }
  return it->second;
}

Index ParamStore::total_values() const {
  Index n = 0;
  for (const auto& [name, tensor] : entries_) {
    n += tensor.size();
  }
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, tensor] : entries_) {
    out.push_back(name);
  }
  return out;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore out;
  for (const auto& [name, tensor] : entries_) {
    out.add(name, TensorBuf::zeros(tensor.shape()));
  }
  return out;
}

ParamStore ParamStore::with_prefix(const std::string& prefix) const {
  ParamStore out;
  for (const auto& [name, tensor] : entries_) {
    out.add(prefix + name, tensor);
  }
  return out;
}

ParamStore ParamStore::strip_prefix(const std::string& prefix) const {
  ParamStore out;
  for (const auto& [name, tensor] : entries_) {
    if (name.rfind(prefix, 0) == 0) {
      out.add(name.substr(prefix.size()), tensor);
    }
  }
  return out;
}

}  // namespace sbr
