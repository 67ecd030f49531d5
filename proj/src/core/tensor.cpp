#include "core/tensor.hpp"

#include <cmath>

namespace bispike {

namespace {
int64_t checked_numel(const std::vector<int64_t>& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(checked_numel(shape_)), 0.0f);
}

Tensor Tensor::full(std::vector<int64_t> shape, float v) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = v;
  return t;
}

Tensor Tensor::from(std::vector<int64_t> shape, std::vector<float> data) {
  int64_t n = checked_numel(shape);
  if (n != static_cast<int64_t>(data.size()))
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + bispike::shape_str(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

int64_t Tensor::rows() const {
  if (rank() != 2) throw ShapeError("rows() on tensor of shape " + shape_str());
  return shape_[0];
}

int64_t Tensor::cols() const {
  if (rank() != 2) throw ShapeError("cols() on tensor of shape " + shape_str());
  return shape_[1];
}

std::string Tensor::shape_str() const { return bispike::shape_str(shape_); }

void Tensor::check_finite(const char* ctx) const {
  for (size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i]))
      throw NumericError(std::string(ctx) + ": non-finite value at flat index " +
                         std::to_string(i));
  }
}

std::string shape_str(const std::vector<int64_t>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace bispike
