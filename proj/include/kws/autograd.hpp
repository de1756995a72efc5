// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#ifndef KWS_AUTOGRAD_HPP_
#define KWS_AUTOGRAD_HPP_

#include <functional>
#include <memory>
#include <vector>

#include "kws/tensor.hpp"

namespace kws::ag {

// Reverse-mode autodiff over a dynamically built graph. Nodes own their
// forward value; gradients are accumulated in creation order, which keeps
// serial training bitwise reproducible.
struct Node {
  Tensor val;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool grad_ready = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> back;

  void ensure_grad() {
    if (!grad_ready) {
      grad = Tensor::zeros(val.shape());
      grad_ready = true;
    }
  }
  void accumulate(const Tensor& g) {
    ensure_grad();
    double* d = grad.data();
    const double* s = g.data();
    const int64_t n = grad.numel();
    for (int64_t i = 0; i < n; ++i) d[i] += s[i];
  }
};

using Value = std::shared_ptr<Node>;

// Graph construction can be disabled (inference / scoring); ops then emit
// leaf constants and skip closure allocation.
bool grad_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  bool prev;
};

Value constant(Tensor v);
Value param(Tensor v);  // leaf with requires_grad

// ---- elementwise (numpy-style broadcasting on binary ops) ----
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value div(const Value& a, const Value& b);
Value neg(const Value& a);
Value scale(const Value& a, double c);
Value add_scalar(const Value& a, double c);
Value exp_v(const Value& a);
Value log_v(const Value& a);
Value sqrt_v(const Value& a);
Value square(const Value& a);
Value tanh_v(const Value& a);
Value sigmoid(const Value& a);
Value relu(const Value& a);
Value leaky_relu(const Value& a, double slope);
Value silu(const Value& a);
Value clamp_min(const Value& a, double lo);

// ---- shape ----
Value reshape(const Value& a, std::vector<int64_t> shape);
Value transpose2d(const Value& a);                    // [A,B] -> [B,A]
Value transpose12(const Value& a);                    // [N,A,B] -> [N,B,A]
Value slice(const Value& a, int axis, int64_t start, int64_t len);
Value concat(const std::vector<Value>& xs, int axis);

// ---- reductions ----
Value sum_all(const Value& a);                        // -> [1]
Value mean_all(const Value& a);
Value sum_axis(const Value& a, int axis, bool keepdim);
Value mean_axis(const Value& a, int axis, bool keepdim);

// ---- linear algebra ----
Value matmul(const Value& a, const Value& b);         // [M,K]x[K,N]
// x: [..., I], w: [O, I], b: [O] or nullptr -> [..., O]
Value linear(const Value& x, const Value& w, const Value& b);
// x: [N, Cin, T], w: [Cout, Cin/groups, K], b: [Cout] or nullptr
Value conv1d(const Value& x, const Value& w, const Value& b, int stride,
             int pad, int dilation, int groups);

// ---- fused nn ops ----
Value softmax_lastdim(const Value& a);
Value log_softmax_lastdim(const Value& a);
// x: [N, C, T]; batch statistics over (N, T) in training mode, running
// statistics in eval mode. Running buffers are updated as a side effect of
// the training-mode forward pass.
Value batch_norm1d(const Value& x, const Value& gamma, const Value& beta,
                   Tensor& running_mean, Tensor& running_var, bool training,
                   double momentum, double eps);
Value layer_norm_lastdim(const Value& x, const Value& gamma, const Value& beta,
                         double eps);

// ---- indexing ----
// x: [R, C], idx: R entries -> [R]; picks x[r, idx[r]].
Value pick_lastdim(const Value& x, const std::vector<int64_t>& idx);
// x: [R, C...], idx rows (no duplicates required; backward scatter-adds).
Value index_select0(const Value& x, const std::vector<int64_t>& idx);
// x: [R, C], adds v[r] at column idx[r].
Value add_at_lastdim(const Value& x, const std::vector<int64_t>& idx,
                     const Value& v);
// bias: [2*clip+1] -> [T,T] with out[t,u] = bias[clamp(u-t,-clip,clip)+clip]
Value relative_bias_matrix(const Value& bias, int64_t t_len, int clip);

// Identity forward; negates the upstream sensitivity in backward.
Value gradient_reversal(const Value& x);

// Root must be scalar. Accumulates into .grad of every reachable node that
// requires grad; leaves existing grads in place (call zero_grad between steps).
void backward(const Value& root);

}  // namespace kws::ag

#endif  // KWS_AUTOGRAD_HPP_
