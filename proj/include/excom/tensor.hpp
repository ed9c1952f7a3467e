#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "excom/common.hpp"

namespace excom {

/// Dense row-major tensor of doubles.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
    data.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
  }
  Tensor(std::vector<std::int64_t> s, std::vector<double> values)
      : shape(std::move(s)), data(std::move(values)) {
    if (static_cast<std::int64_t>(data.size()) != numel_of(shape)) {
      throw DataError("tensor: shape/data size mismatch");
    }
  }

  static std::int64_t numel_of(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  double& at(std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  double at(std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }
  double& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * dim(1) + c)]; }
  double at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * dim(1) + c)]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor row(std::vector<double> values) {
    auto n = static_cast<std::int64_t>(values.size());
    return Tensor({n}, std::move(values));
  }
  static Tensor matrix(std::int64_t rows, std::int64_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }
};

}  // namespace excom
