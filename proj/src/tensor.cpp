#include "msopt/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace msopt {

Tensor::Tensor(std::vector<std::size_t> shape_in) : shape(std::move(shape_in)) {
  values.assign(numel(), 0.0);
}

std::size_t Tensor::numel() const {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return shape.empty() ? 0 : n;
}

void Tensor::ensure_grad() {
  if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

void Tensor::zero_grad() { grad.assign(values.size(), 0.0); }

bool Tensor::values_finite() const {
  for (double v : values)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor& ParamSet::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

const Tensor& ParamSet::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

Tensor& ParamSet::emplace(const std::string& name, std::vector<std::size_t> shape) {
  return tensors.emplace(name, Tensor(std::move(shape))).first->second;
}

std::size_t ParamSet::total_params() const {
  std::size_t n = 0;
  for (const auto& [k, t] : tensors) n += t.numel();
  return n;
}

}  // namespace msopt
