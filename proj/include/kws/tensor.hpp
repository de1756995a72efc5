// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#ifndef KWS_TENSOR_HPP_
#define KWS_TENSOR_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace kws {

// Dense row-major float64 tensor. All training math runs in double so that
// analytic gradients can be checked against central finite differences at
// tight tolerances.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape);

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int64_t> shape, double v);
  static Tensor scalar(double v);
  static Tensor from_flat(std::vector<int64_t> shape, std::vector<double> data);

  const std::vector<int64_t>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Strided accessors for readability in non-hot paths.
  double& at2(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  double at2(int64_t i, int64_t j) const { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  double& at3(int64_t i, int64_t j, int64_t k) {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  double at3(int64_t i, int64_t j, int64_t k) const {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }

  void fill(double v);
  bool all_finite() const;
  double max_abs() const;
  std::string shape_str() const;

  const std::vector<double>& flat() const { return data_; }
  std::vector<double>& flat() { return data_; }

 private:
  std::vector<int64_t> shape_;
  std::vector<double> data_;
};

int64_t shape_numel(const std::vector<int64_t>& shape);

// Numpy-style broadccasting over equal-or-paddable ranks.
std::vector<int64_t> broadcast_shape(const std::vector<int64_t>& a,
                                     const std::vector<int64_t>& b);

// Sum `g` over the axes that were broadcast to reach its shape from `target`.
Tensor reduce_to_shape(const Tensor& g, const std::vector<int64_t>& target);

}  // namespace kws

#endif  // KWS_TENSOR_HPP_
