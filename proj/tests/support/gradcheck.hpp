// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#ifndef KWS_TESTS_SUPPORT_GRADCHECK_HPP_
#define KWS_TESTS_SUPPORT_GRADCHECK_HPP_

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "kws/autograd.hpp"
#include "kws/nn.hpp"

namespace kws::test {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst;  // "param[i]" of the worst element
  int64_t checked = 0;
};

// Central finite differences against analytic gradients. `loss_fn` must
// rebuild the graph from current parameter values on every call. Element
// errors are measured relative to max(|analytic|, |numeric|) with an absolute
// floor tied to the overall gradient scale, so near-zero components of a
// large gradient do not dominate the report.
inline GradCheckResult grad_check(
    const std::function<kws::ag::Value()>& loss_fn,
    const std::vector<std::pair<std::string, kws::ag::Value>>& params,
    double h_rel = 1e-5) {
  using kws::ag::Value;
  // analytic pass
  for (auto& [name, p] : params) {
    p->grad = kws::Tensor();
    p->grad_ready = false;
  }
  Value loss = loss_fn();
  kws::ag::backward(loss);

  double grad_scale = 0.0;
  for (auto& [name, p] : params)
    if (p->grad_ready) grad_scale = std::max(grad_scale, p->grad.max_abs());
  double abs_floor = std::max(1e-12, 1e-6 * grad_scale);

  GradCheckResult res;
  for (auto& [name, p] : params) {
    kws::Tensor analytic =
        p->grad_ready ? p->grad : kws::Tensor::zeros(p->val.shape());
    for (int64_t i = 0; i < p->val.numel(); ++i) {
      double orig = p->val[i];
      double h = h_rel * std::max(1.0, std::fabs(orig));
      p->val[i] = orig + h;
      double fp = loss_fn()->val[0];
      p->val[i] = orig - h;
      double fm = loss_fn()->val[0];
      p->val[i] = orig;
      double numeric = (fp - fm) / (2.0 * h);
      double a = analytic[i];
      double denom = std::max({std::fabs(a), std::fabs(numeric), abs_floor});
      double rel = std::fabs(a - numeric) / denom;
      ++res.checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

inline GradCheckResult grad_check_module(
    const std::function<kws::ag::Value()>& loss_fn, kws::nn::Module& m,
    double h_rel = 1e-5) {
  return grad_check(loss_fn, m.named_params(), h_rel);
}

// Fills parameters of a module with reproducible random values in a range
// that keeps activations well-scaled for checking.
inline void randomize_params(kws::nn::Module& m, uint64_t seed,
                             double lo = -0.5, double hi = 0.5) {
  kws::Rng rng(seed);
  for (auto& [name, p] : m.named_params()) {
    for (int64_t i = 0; i < p->val.numel(); ++i)
      p->val[i] = rng.uniform(lo, hi);
  }
}

inline kws::Tensor random_tensor(std::vector<int64_t> shape, uint64_t seed,
                                 double lo = -1.0, double hi = 1.0) {
  kws::Tensor t(std::move(shape));
  kws::Rng rng(seed);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace kws::test

#endif  // KWS_TESTS_SUPPORT_GRADCHECK_HPP_
