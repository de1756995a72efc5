// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#include "kws/tensor.hpp"

#include <cmath>
#include <sstream>

#include "kws/common.hpp"

namespace kws {

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<int64_t> shape) : shape_(std::move(shape)) {
  for (int64_t d : shape_) {
    if (d < 0) throw NumericError("negative tensor dimension");
  }
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor Tensor::full(std::vector<int64_t> shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t({1});
  t[0] = v;
  return t;
}

Tensor Tensor::from_flat(std::vector<int64_t> shape, std::vector<double> data) {
  Tensor t;
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw NumericError("from_flat: shape/data size mismatch");
  t.shape_ = std::move(shape);
  t.data_ = std::move(data);
  return t;
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

double Tensor::max_abs() const {
  double m = 0.0;
  for (double x : data_) m = std::max(m, std::fabs(x));
  return m;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ",";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

std::vector<int64_t> broadcast_shape(const std::vector<int64_t>& a,
                                     const std::vector<int64_t>& b) {
  size_t r = std::max(a.size(), b.size());
  std::vector<int64_t> out(r, 1);
  for (size_t i = 0; i < r; ++i) {
    int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw NumericError("broadcast mismatch between shapes");
    out[i] = std::max(da, db);
  }
  return out;
}

Tensor reduce_to_shape(const Tensor& g, const std::vector<int64_t>& target) {
  if (g.shape() == target) return g;
  size_t r = g.shape().size();
  std::vector<int64_t> padded(r, 1);
  // right-align target into padded
  for (size_t i = 0; i < target.size(); ++i)
    padded[r - target.size() + i] = target[i];

  Tensor out(padded);
  // strides of out over g's index space (0 where broadcast)
  std::vector<int64_t> ostride(r, 0);
  int64_t acc = 1;
  for (size_t i = r; i-- > 0;) {
    ostride[i] = (padded[i] == 1) ? 0 : acc;
    acc *= padded[i];
  }
  std::vector<int64_t> idx(r, 0);
  const int64_t n = g.numel();
  const double* gp = g.data();
  double* op = out.data();
  for (int64_t lin = 0; lin < n; ++lin) {
    int64_t o = 0;
    for (size_t i = 0; i < r; ++i) o += idx[i] * ostride[i];
    op[o] += gp[lin];
    for (size_t i = r; i-- > 0;) {
      if (++idx[i] < g.shape()[i]) break;
      idx[i] = 0;
    }
  }
  return Tensor::from_flat(target, std::move(out.flat()));
}

}  // namespace kws
