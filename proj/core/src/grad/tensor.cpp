#include "rarecp/grad/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "rarecp/error.hpp"

namespace rarecp::grad {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<std::size_t> shape, bool requires_grad)
    : shape_(std::move(shape)), data_(shape_size(shape_), 0.0), requires_grad_(requires_grad) {
  if (shape_.size() > 2) throw NumericError("tensors of rank > 2 are not supported");
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad)
    : shape_(std::move(shape)), data_(std::move(data)), requires_grad_(requires_grad) {
  if (shape_.size() > 2) throw NumericError("tensors of rank > 2 are not supported");
  if (data_.size() != shape_size(shape_)) {
    throw NumericError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::scalar(double v) { return Tensor(std::vector<std::size_t>{}, std::vector<double>{v}); }

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::zeros_like(const Tensor& other) { return Tensor(other.shape()); }

double Tensor::item() const {
  if (data_.size() != 1) throw NumericError("item() on a tensor with " + std::to_string(data_.size()) + " elements");
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

}  // namespace rarecp::grad
