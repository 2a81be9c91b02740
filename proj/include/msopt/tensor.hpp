#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "msopt/convex.hpp"

namespace msopt {

// Dense tensor with an optional gradient buffer of matching shape.
struct Tensor {
  std::vector<std::size_t> shape;
  Vec values;
  Vec grad;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape_in);

  std::size_t numel() const;
  std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

  double* data() { return values.data(); }
  const double* data() const { return values.data(); }
  void ensure_grad();
  void zero_grad();
  bool values_finite() const;
};

// Named parameter collection; std::map keeps iteration order stable for
// serialization and optimizer sweeps.
struct ParamSet {
  std::map<std::string, Tensor> tensors;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  Tensor& emplace(const std::string& name, std::vector<std::size_t> shape);
  std::size_t total_params() const;
};

}  // namespace msopt
