#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/common.hpp"

namespace bispike {

// Dense row-major f32 tensor. Rank 0 is not used; scalars are shape {1}.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape);  // zero-filled
  static Tensor full(std::vector<int64_t> shape, float v);
  static Tensor from(std::vector<int64_t> shape, std::vector<float> data);
  static Tensor scalar(float v) { return full({1}, v); }

  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_.at(i); }
  const std::vector<int64_t>& shape() const { return shape_; }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool is_scalar() const { return numel() == 1; }

  // 2-D helpers; throw on other ranks.
  int64_t rows() const;
  int64_t cols() const;

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  float& at(int64_t i) { return data_[i]; }
  float at(int64_t i) const { return data_[i]; }
  float& at2(int64_t r, int64_t c) { return data_[r * cols() + c]; }
  float at2(int64_t r, int64_t c) const { return data_[r * cols() + c]; }

  std::string shape_str() const;
  // Throws NumericError naming `ctx` and the first offending flat index.
  void check_finite(const char* ctx) const;

 private:
  std::vector<int64_t> shape_;
  std::vector<float> data_;
};

std::string shape_str(const std::vector<int64_t>& shape);

}  // namespace bispike
