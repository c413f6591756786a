#pragma once

#include "sbr/common.hpp"

#include <map>
#include <string>
#include <vector>

namespace sbr {

// Dense rank-1 or rank-2 tensor of 64-bit reals. A rank-1 tensor of size n is
// backed by a 1 x n matrix; shape() keeps the logical rank.
class TensorBuf {
 public:
  TensorBuf() = default;

  static TensorBuf from_vector(const Vector& v);
  static TensorBuf from_matrix(Matrix m);
  static TensorBuf zeros(const std::vector<Index>& shape);

  const std::vector<Index>& shape() const { return shape_; }
  Index size() const { return values_.size(); }
  bool is_vector() const { return shape_.size() == 1; }

  Matrix& values() { return values_; }
  const Matrix& values() const { return values_; }

  Vector as_vector() const;

  // Throws SchemaError on NaN/Inf; `context` names the tensor in the message.
  void check_finite(const std::string& context) const;

 private:
  std::vector<Index> shape_;
  Matrix values_;
};

// Named parameter collection. Iteration order is the lexicographic name
// order, which makes checkpoints and optimizer sweeps deterministic.
class ParamStore {
 public:
  using Map = std::map<std::string, TensorBuf>;

  void add(const std::string& name, TensorBuf tensor);
  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  TensorBuf& at(const std::string& name);
  const TensorBuf& at(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  Index total_values() const;

  Map::iterator begin() { return entries_.begin(); }
  Map::iterator end() { return entries_.end(); }
  Map::const_iterator begin() const { return entries_.begin(); }
  Map::const_iterator end() const { return entries_.end(); }

  std::vector<std::string> names() const;

  // Same names, same shapes, all values zero.
  ParamStore zeros_like() const;

  // Copy with every name prefixed, e.g. "enc." + "W0" -> "enc.W0".
  ParamStore with_prefix(const std::string& prefix) const;
  // Inverse of with_prefix: keep entries under `prefix` and strip it.
  ParamStore strip_prefix(const std::string& prefix) const;

 private:
  Map entries_;
};

}  // namespace sbr
