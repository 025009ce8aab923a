#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace skewprune {

/// Dense row-major float32 tensor. The single numeric carrier for model
/// parameters, activations, and gradients. Values are plain data; automatic
/// differentiation lives in Graph, not here.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<int64_t> s);

  static Tensor zeros(std::vector<int64_t> shape);
  static Tensor full(std::vector<int64_t> shape, float value);
  static Tensor from(std::vector<int64_t> shape, std::vector<float> values);

  int64_t numel() const;
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

  /// 2-D matrix view: `cols` is the last axis, `rows` is everything else.
  int64_t cols() const { return shape.empty() ? 1 : shape.back(); }
  int64_t rows() const { return shape.empty() ? 0 : numel() / cols(); }

  float& at(int64_t r, int64_t c) { return data[static_cast<size_t>(r * cols() + c)]; }
  float at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * cols() + c)]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;

  std::string shape_str() const;
};

int64_t shape_numel(const std::vector<int64_t>& shape);
std::string shape_to_string(const std::vector<int64_t>& shape);

/// Throws DimensionError naming both shapes when they differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

}  // namespace skewprune
