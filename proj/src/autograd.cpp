// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#include "kws/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "kws/common.hpp"

namespace kws::ag {

namespace {

thread_local bool g_grad_enabled = true;

bool rg(const Value& v) { return v && v->requires_grad; }

Value finish(Tensor val, std::vector<Value> parents,
             std::function<void(Node&)> back) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  bool any = false;
  for (const auto& p : parents) any = any || rg(p);
  if (any && g_grad_enabled) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->back = std::move(back);
  }
  return n;
}

// Iterates an output shape while tracking the linear offsets of two
// broadcast operands.
struct Bcast {
  std::vector<int64_t> out_shape;
  std::vector<int64_t> sa, sb;  // strides of a and b over out space
  int64_t n;

  Bcast(const std::vector<int64_t>& a, const std::vector<int64_t>& b) {
    out_shape = broadcast_shape(a, b);
    size_t r = out_shape.size();
    sa.assign(r, 0);
    sb.assign(r, 0);
    int64_t acc_a = 1, acc_b = 1;
    for (size_t i = r; i-- > 0;) {
      int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
      int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
      sa[i] = (da == 1) ? 0 : acc_a;
      sb[i] = (db == 1) ? 0 : acc_b;
      acc_a *= da;
      acc_b *= db;
    }
    n = shape_numel(out_shape);
  }

  template <class F>
  void run(F&& f) const {
    size_t r = out_shape.size();
    std::vector<int64_t> idx(r, 0);
    int64_t ia = 0, ib = 0;
    for (int64_t lin = 0; lin < n; ++lin) {
      f(lin, ia, ib);
      for (size_t i = r; i-- > 0;) {
        ++idx[i];
        ia += sa[i];
        ib += sb[i];
        if (idx[i] < out_shape[i]) break;
        ia -= sa[i] * out_shape[i];
        ib -= sb[i] * out_shape[i];
        idx[i] = 0;
      }
    }
  }
};

template <class FwdF, class BackA, class BackB>
Value binary_op(const Value& a, const Value& b, FwdF fwd, BackA da, BackB db) {
  const Tensor& ta = a->val;
  const Tensor& tb = b->val;
  if (ta.same_shape(tb)) {
    Tensor out(ta.shape());
    const int64_t n = ta.numel();
    const double* pa = ta.data();
    const double* pb = tb.data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
    return finish(std::move(out), {a, b}, [a, b, da, db](Node& self) {
      const int64_t n = self.val.numel();
      const double* g = self.grad.data();
      const double* pa = a->val.data();
      const double* pb = b->val.data();
      if (rg(a)) {
        a->ensure_grad();
        double* ga = a->grad.data();
        for (int64_t i = 0; i < n; ++i) ga[i] += da(g[i], pa[i], pb[i]);
      }
      if (rg(b)) {
        b->ensure_grad();
        double* gb = b->grad.data();
        for (int64_t i = 0; i < n; ++i) gb[i] += db(g[i], pa[i], pb[i]);
      }
    });
  }
  Bcast bc(ta.shape(), tb.shape());
  Tensor out(bc.out_shape);
  {
    const double* pa = ta.data();
    const double* pb = tb.data();
    double* po = out.data();
    bc.run([&](int64_t lin, int64_t ia, int64_t ib) {
      po[lin] = fwd(pa[ia], pb[ib]);
    });
  }
  return finish(std::move(out), {a, b}, [a, b, da, db, bc](Node& self) {
    const double* g = self.grad.data();
    const double* pa = a->val.data();
    const double* pb = b->val.data();
    if (rg(a)) {
      a->ensure_grad();
      double* ga = a->grad.data();
      bc.run([&](int64_t lin, int64_t ia, int64_t ib) {
        ga[ia] += da(g[lin], pa[ia], pb[ib]);
      });
    }
    if (rg(b)) {
      b->ensure_grad();
      double* gb = b->grad.data();
      bc.run([&](int64_t lin, int64_t ia, int64_t ib) {
        gb[ib] += db(g[lin], pa[ia], pb[ib]);
      });
    }
  });
}

template <class FwdF, class BackF>
Value unary_op(const Value& a, FwdF fwd, BackF dv) {
  Tensor out(a->val.shape());
  const int64_t n = out.numel();
  const double* pa = a->val.data();
  double* po = out.data();
  for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
  return finish(std::move(out), {a}, [a, dv](Node& self) {
    if (!rg(a)) return;
    a->ensure_grad();
    const int64_t n = self.val.numel();
    const double* g = self.grad.data();
    const double* x = a->val.data();
    const double* y = self.val.data();
    double* ga = a->grad.data();
    for (int64_t i = 0; i < n; ++i) ga[i] += dv(g[i], x[i], y[i]);
  });
}

// axis decomposition: shape -> (outer, axis_len, inner)
void axis_split(const std::vector<int64_t>& shape, int axis, int64_t* outer,
                int64_t* len, int64_t* inner) {
  *outer = 1;
  *inner = 1;
  for (int i = 0; i < axis; ++i) *outer *= shape[static_cast<size_t>(i)];
  *len = shape[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i)
    *inner *= shape[i];
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

Value constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->val = std::move(v);
  return n;
}

Value param(Tensor v) {
  auto n = std::make_shared<Node>();
  n->val = std::move(v);
  n->requires_grad = true;
  return n;
}

Value add(const Value& a, const Value& b) {
  return binary_op(
      a, b, [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; },
      [](double g, double, double) { return g; });
}

Value sub(const Value& a, const Value& b) {
  return binary_op(
      a, b, [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; },
      [](double g, double, double) { return -g; });
}

Value mul(const Value& a, const Value& b) {
  return binary_op(
      a, b, [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

Value div(const Value& a, const Value& b) {
  return binary_op(
      a, b, [](double x, double y) { return x / y; },
      [](double g, double, double y) { return g / y; },
      [](double g, double x, double y) { return -g * x / (y * y); });
}

Value neg(const Value& a) {
  return unary_op(
      a, [](double x) { return -x; },
      [](double g, double, double) { return -g; });
}

Value scale(const Value& a, double c) {
  return unary_op(
      a, [c](double x) { return c * x; },
      [c](double g, double, double) { return c * g; });
}

Value add_scalar(const Value& a, double c) {
  return unary_op(
      a, [c](double x) { return x + c; },
      [](double g, double, double) { return g; });
}

Value exp_v(const Value& a) {
  return unary_op(
      a, [](double x) { return std::exp(x); },
      [](double g, double, double y) { return g * y; });
}

Value log_v(const Value& a) {
  return unary_op(
      a, [](double x) { return std::log(x); },
      [](double g, double x, double) { return g / x; });
}

Value sqrt_v(const Value& a) {
  return unary_op(
      a, [](double x) { return std::sqrt(x); },
      [](double g, double, double y) { return 0.5 * g / y; });
}

Value square(const Value& a) {
  return unary_op(
      a, [](double x) { return x * x; },
      [](double g, double x, double) { return 2.0 * g * x; });
}

Value tanh_v(const Value& a) {
  return unary_op(
      a, [](double x) { return std::tanh(x); },
      [](double g, double, double y) { return g * (1.0 - y * y); });
}

Value sigmoid(const Value& a) {
  return unary_op(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double g, double, double y) { return g * y * (1.0 - y); });
}

Value relu(const Value& a) {
  return unary_op(
      a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double g, double x, double) { return x > 0.0 ? g : 0.0; });
}

Value leaky_relu(const Value& a, double slope) {
  return unary_op(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double g, double x, double) { return x > 0.0 ? g : slope * g; });
}

Value silu(const Value& a) {
  return unary_op(
      a,
      [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double g, double x, double) {
        double s = 1.0 / (1.0 + std::exp(-x));
        return g * (s + x * s * (1.0 - s));
      });
}

Value clamp_min(const Value& a, double lo) {
  return unary_op(
      a, [lo](double x) { return x < lo ? lo : x; },
      [lo](double g, double x, double) { return x < lo ? 0.0 : g; });
}

Value reshape(const Value& a, std::vector<int64_t> shape) {
  if (shape_numel(shape) != a->val.numel())
    throw NumericError("reshape: element count mismatch " + a->val.shape_str());
  Tensor out = Tensor::from_flat(shape, a->val.flat());
  return finish(std::move(out), {a}, [a](Node& self) {
    if (!rg(a)) return;
    a->accumulate(Tensor::from_flat(a->val.shape(), self.grad.flat()));
  });
}

Value transpose2d(const Value& a) {
  const Tensor& t = a->val;
  if (t.rank() != 2) throw NumericError("transpose2d expects rank 2");
  const int64_t r = t.dim(0), c = t.dim(1);
  Tensor out({c, r});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out.at2(j, i) = t.at2(i, j);
  return finish(std::move(out), {a}, [a, r, c](Node& self) {
    if (!rg(a)) return;
    a->ensure_grad();
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j)
        a->grad.at2(i, j) += self.grad.at2(j, i);
  });
}

Value transpose12(const Value& a) {
  const Tensor& t = a->val;
  if (t.rank() != 3) throw NumericError("transpose12 expects rank 3");
  const int64_t n = t.dim(0), x = t.dim(1), y = t.dim(2);
  Tensor out({n, y, x});
  for (int64_t b = 0; b < n; ++b)
    for (int64_t i = 0; i < x; ++i)
      for (int64_t j = 0; j < y; ++j) out.at3(b, j, i) = t.at3(b, i, j);
  return finish(std::move(out), {a}, [a, n, x, y](Node& self) {
    if (!rg(a)) return;
    a->ensure_grad();
    for (int64_t b = 0; b < n; ++b)
      for (int64_t i = 0; i < x; ++i)
        for (int64_t j = 0; j < y; ++j)
          a->grad.at3(b, i, j) += self.grad.at3(b, j, i);
  });
}

Value slice(const Value& a, int axis, int64_t start, int64_t len) {
  const Tensor& t = a->val;
  int64_t outer, alen, inner;
  axis_split(t.shape(), axis, &outer, &alen, &inner);
  if (start < 0 || start + len > alen) throw NumericError("slice out of range");
  std::vector<int64_t> oshape = t.shape();
  oshape[static_cast<size_t>(axis)] = len;
  Tensor out(oshape);
  const double* src = t.data();
  double* dst = out.data();
  for (int64_t o = 0; o < outer; ++o)
    std::copy(src + (o * alen + start) * inner,
              src + (o * alen + start + len) * inner,
              dst + o * len * inner);
  return finish(std::move(out), {a}, [a, axis, start, len](Node& self) {
    if (!rg(a)) return;
    a->ensure_grad();
    int64_t outer, alen, inner;
    axis_split(a->val.shape(), axis, &outer, &alen, &inner);
    const double* g = self.grad.data();
    double* ga = a->grad.data();
    for (int64_t o = 0; o < outer; ++o) {
      const double* gs = g + o * len * inner;
      double* gd = ga + (o * alen + start) * inner;
      for (int64_t i = 0; i < len * inner; ++i) gd[i] += gs[i];
    }
  });
}

Value concat(const std::vector<Value>& xs, int axis) {
  if (xs.empty()) throw NumericError("concat of zero tensors");
  std::vector<int64_t> oshape = xs[0]->val.shape();
  int64_t total = 0;
  for (const auto& x : xs) {
    total += x->val.dim(axis);
    for (int i = 0; i < x->val.rank(); ++i)
      if (i != axis && x->val.dim(i) != xs[0]->val.dim(i))
        throw NumericError("concat shape mismatch");
  }
  oshape[static_cast<size_t>(axis)] = total;
  Tensor out(oshape);
  int64_t outer, olen, inner;
  axis_split(oshape, axis, &outer, &olen, &inner);
  int64_t off = 0;
  for (const auto& x : xs) {
    int64_t xl = x->val.dim(axis);
    const double* src = x->val.data();
    double* dst = out.data();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(src + o * xl * inner, src + (o + 1) * xl * inner,
                dst + (o * olen + off) * inner);
    off += xl;
  }
  std::vector<Value> parents(xs.begin(), xs.end());
  return finish(std::move(out), parents, [xs, axis](Node& self) {
    int64_t outer, olen, inner;
    axis_split(self.val.shape(), axis, &outer, &olen, &inner);
    const double* g = self.grad.data();
    int64_t off = 0;
    for (const auto& x : xs) {
      int64_t xl = x->val.dim(axis);
      if (rg(x)) {
        x->ensure_grad();
        double* gd = x->grad.data();
        for (int64_t o = 0; o < outer; ++o) {
          const double* gs = g + (o * olen + off) * inner;
          double* d = gd + o * xl * inner;
          for (int64_t i = 0; i < xl * inner; ++i) d[i] += gs[i];
        }
      }
      off += xl;
    }
  });
}

Value sum_all(const Value& a) {
  double s = 0.0;
  const double* p = a->val.data();
  for (int64_t i = 0; i < a->val.numel(); ++i) s += p[i];
  return finish(Tensor::scalar(s), {a}, [a](Node& self) {
    if (!rg(a)) return;
    a->ensure_grad();
    double g = self.grad[0];
    double* ga = a->grad.data();
    for (int64_t i = 0; i < a->val.numel(); ++i) ga[i] += g;
  });
}

Value mean_all(const Value& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a->val.numel()));
}

Value sum_axis(const Value& a, int axis, bool keepdim) {
  const Tensor& t = a->val;
  int64_t outer, len, inner;
  axis_split(t.shape(), axis, &outer, &len, &inner);
  std::vector<int64_t> oshape;
  for (int i = 0; i < t.rank(); ++i) {
    if (i == axis) {
      if (keepdim) oshape.push_back(1);
    } else {
      oshape.push_back(t.dim(i));
    }
  }
  if (oshape.empty()) oshape.push_back(1);
  Tensor out(oshape);
  const double* p = t.data();
  double* po = out.data();
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t l = 0; l < len; ++l)
      for (int64_t i = 0; i < inner; ++i)
        po[o * inner + i] += p[(o * len + l) * inner + i];
  return finish(std::move(out), {a}, [a, axis](Node& self) {
    if (!rg(a)) return;
    a->ensure_grad();
    int64_t outer, len, inner;
    axis_split(a->val.shape(), axis, &outer, &len, &inner);
    const double* g = self.grad.data();
    double* ga = a->grad.data();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t l = 0; l < len; ++l)
        for (int64_t i = 0; i < inner; ++i)
          ga[(o * len + l) * inner + i] += g[o * inner + i];
  });
}

Value mean_axis(const Value& a, int axis, bool keepdim) {
  double inv = 1.0 / static_cast<double>(a->val.dim(axis));
  return scale(sum_axis(a, axis, keepdim), inv);
}

Value matmul(const Value& a, const Value& b) {
  const Tensor& ta = a->val;
  const Tensor& tb = b->val;
  if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0))
    throw NumericError("matmul shape mismatch " + ta.shape_str() + " x " +
                       tb.shape_str());
  const int64_t m = ta.dim(0), k = ta.dim(1), n = tb.dim(1);
  Tensor out({m, n});
  const double* pa = ta.data();
  const double* pb = tb.data();
  double* po = out.data();
  for (int64_t i = 0; i < m; ++i)
    for (int64_t kk = 0; kk < k; ++kk) {
      double av = pa[i * k + kk];
      if (av == 0.0) continue;
      const double* brow = pb + kk * n;
      double* orow = po + i * n;
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  return finish(std::move(out), {a, b}, [a, b, m, k, n](Node& self) {
    const double* g = self.grad.data();
    if (rg(a)) {
      a->ensure_grad();
      double* ga = a->grad.data();
      const double* pb = b->val.data();
      // ga = g * b^T
      for (int64_t i = 0; i < m; ++i)
        for (int64_t kk = 0; kk < k; ++kk) {
          double s = 0.0;
          const double* grow = g + i * n;
          const double* brow = pb + kk * n;
          for (int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          ga[i * k + kk] += s;
        }
    }
    if (rg(b)) {
      b->ensure_grad();
      double* gb = b->grad.data();
      const double* pa = a->val.data();
      // gb = a^T * g
      for (int64_t kk = 0; kk < k; ++kk)
        for (int64_t i = 0; i < m; ++i) {
          double av = pa[i * k + kk];
          if (av == 0.0) continue;
          const double* grow = g + i * n;
          double* brow = gb + kk * n;
          for (int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
        }
    }
  });
}

Value linear(const Value& x, const Value& w, const Value& b) {
  const Tensor& tx = x->val;
  const Tensor& tw = w->val;
  if (tw.rank() != 2 || tx.dim(tx.rank() - 1) != tw.dim(1))
    throw NumericError("linear shape mismatch " + tx.shape_str() + " with " +
                       tw.shape_str());
  const int64_t in = tw.dim(1), out_dim = tw.dim(0);
  const int64_t rows = tx.numel() / in;
  std::vector<int64_t> oshape = tx.shape();
  oshape.back() = out_dim;
  Tensor out(oshape);
  const double* px = tx.data();
  const double* pw = tw.data();
  const double* pb = b ? b->val.data() : nullptr;
  double* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = px + r * in;
    double* orow = po + r * out_dim;
    for (int64_t o = 0; o < out_dim; ++o) {
      const double* wr = pw + o * in;
      double s = pb ? pb[o] : 0.0;
      for (int64_t i = 0; i < in; ++i) s += xr[i] * wr[i];
      orow[o] = s;
    }
  }
  std::vector<Value> parents = b ? std::vector<Value>{x, w, b}
                                 : std::vector<Value>{x, w};
  return finish(std::move(out), parents, [x, w, b, rows, in, out_dim](Node& self) {
    const double* g = self.grad.data();
    if (rg(x)) {
      x->ensure_grad();
      double* gx = x->grad.data();
      const double* pw = w->val.data();
      for (int64_t r = 0; r < rows; ++r) {
        const double* grow = g + r * out_dim;
        double* gxr = gx + r * in;
        for (int64_t o = 0; o < out_dim; ++o) {
          double gv = grow[o];
          if (gv == 0.0) continue;
          const double* wr = pw + o * in;
          for (int64_t i = 0; i < in; ++i) gxr[i] += gv * wr[i];
        }
      }
    }
    if (rg(w)) {
      w->ensure_grad();
      double* gw = w->grad.data();
      const double* px = x->val.data();
      for (int64_t r = 0; r < rows; ++r) {
        const double* grow = g + r * out_dim;
        const double* xr = px + r * in;
        for (int64_t o = 0; o < out_dim; ++o) {
          double gv = grow[o];
          if (gv == 0.0) continue;
          double* wr = gw + o * in;
          for (int64_t i = 0; i < in; ++i) wr[i] += gv * xr[i];
        }
      }
    }
    if (b && rg(b)) {
      b->ensure_grad();
      double* gb = b->grad.data();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t o = 0; o < out_dim; ++o) gb[o] += g[r * out_dim + o];
    }
  });
}

Value conv1d(const Value& x, const Value& w, const Value& b, int stride,
             int pad, int dilation, int groups) {
  const Tensor& tx = x->val;
  const Tensor& tw = w->val;
  if (tx.rank() != 3 || tw.rank() != 3)
    throw NumericError("conv1d expects x [N,C,T], w [Co,Cig,K]");
  const int64_t n = tx.dim(0), cin = tx.dim(1), t_in = tx.dim(2);
  const int64_t cout = tw.dim(0), cig = tw.dim(1), k = tw.dim(2);
  if (cin % groups != 0 || cout % groups != 0 || cig != cin / groups)
    throw NumericError("conv1d group/channel mismatch");
  const int64_t span = (k - 1) * dilation + 1;
  const int64_t t_out = (t_in + 2 * pad - span) / stride + 1;
  if (t_out < 1) throw NumericError("conv1d output length < 1");
  const int64_t co_per_g = cout / groups;
  Tensor out({n, cout, t_out});
  const double* px = tx.data();
  const double* pw = tw.data();
  const double* pb = b ? b->val.data() : nullptr;
  double* po = out.data();

  auto t_range = [&](int64_t kk, int64_t* t0, int64_t* t1) {
    // valid t where ti = t*stride - pad + kk*dilation lies in [0, t_in)
    int64_t off = kk * dilation - pad;
    int64_t lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
    int64_t num = t_in - 1 - off;
    int64_t hi = num < 0 ? 0 : num / stride + 1;
    *t0 = std::max<int64_t>(0, lo);
    *t1 = std::min(t_out, hi);
  };

  for (int64_t in_ = 0; in_ < n; ++in_) {
    for (int64_t g = 0; g < groups; ++g) {
      for (int64_t oc = 0; oc < co_per_g; ++oc) {
        const int64_t co = g * co_per_g + oc;
        double* orow = po + (in_ * cout + co) * t_out;
        if (pb) {
          for (int64_t t = 0; t < t_out; ++t) orow[t] = pb[co];
        }
        for (int64_t ic = 0; ic < cig; ++ic) {
          const int64_t ci = g * cig + ic;
          const double* xrow = px + (in_ * cin + ci) * t_in;
          const double* wrow = pw + (co * cig + ic) * k;
          for (int64_t kk = 0; kk < k; ++kk) {
            const double wv = wrow[kk];
            if (wv == 0.0) continue;
            int64_t t0, t1;
            t_range(kk, &t0, &t1);
            const int64_t off = kk * dilation - pad;
            const double* xs = xrow + t0 * stride + off;
            if (stride == 1) {
              for (int64_t t = t0; t < t1; ++t) orow[t] += wv * xs[t - t0];
            } else {
              for (int64_t t = t0; t < t1; ++t)
                orow[t] += wv * xrow[t * stride + off];
            }
          }
        }
      }
    }
  }

  std::vector<Value> parents = b ? std::vector<Value>{x, w, b}
                                 : std::vector<Value>{x, w};
  return finish(std::move(out), parents,
                [x, w, b, stride, pad, dilation, groups, n, cin, t_in, cout,
                 cig, k, t_out, co_per_g](Node& self) {
    const double* g = self.grad.data();
    const double* px = x->val.data();
    const double* pw = w->val.data();
    auto t_range = [&](int64_t kk, int64_t* t0, int64_t* t1) {
      int64_t off = kk * dilation - pad;
      int64_t lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
      int64_t num = t_in - 1 - off;
      int64_t hi = num < 0 ? 0 : num / stride + 1;
      *t0 = std::max<int64_t>(0, lo);
      *t1 = std::min(t_out, hi);
    };
    if (rg(x)) x->ensure_grad();
    if (rg(w)) w->ensure_grad();
    double* gx = rg(x) ? x->grad.data() : nullptr;
    double* gw = rg(w) ? w->grad.data() : nullptr;
    for (int64_t in_ = 0; in_ < n; ++in_) {
      for (int64_t gi = 0; gi < groups; ++gi) {
        for (int64_t oc = 0; oc < co_per_g; ++oc) {
          const int64_t co = gi * co_per_g + oc;
          const double* grow = g + (in_ * cout + co) * t_out;
          for (int64_t ic = 0; ic < cig; ++ic) {
            const int64_t ci = gi * cig + ic;
            const double* xrow = px + (in_ * cin + ci) * t_in;
            double* gxrow = gx ? gx + (in_ * cin + ci) * t_in : nullptr;
            const double* wrow = pw + (co * cig + ic) * k;
            double* gwrow = gw ? gw + (co * cig + ic) * k : nullptr;
            for (int64_t kk = 0; kk < k; ++kk) {
              int64_t t0, t1;
              t_range(kk, &t0, &t1);
              const int64_t off = kk * dilation - pad;
              if (gxrow) {
                const double wv = wrow[kk];
                for (int64_t t = t0; t < t1; ++t)
                  gxrow[t * stride + off] += wv * grow[t];
              }
              if (gwrow) {
                double s = 0.0;
                for (int64_t t = t0; t < t1; ++t)
                  s += xrow[t * stride + off] * grow[t];
                gwrow[kk] += s;
              }
            }
          }
        }
      }
    }
    if (b && rg(b)) {
      b->ensure_grad();
      double* gb = b->grad.data();
      for (int64_t in_ = 0; in_ < n; ++in_)
        for (int64_t co = 0; co < cout; ++co) {
          const double* grow = g + (in_ * cout + co) * t_out;
          double s = 0.0;
          for (int64_t t = 0; t < t_out; ++t) s += grow[t];
          gb[co] += s;
        }
    }
  });
}

Value softmax_lastdim(const Value& a) {
  const Tensor& t = a->val;
  const int64_t c = t.dim(t.rank() - 1);
  const int64_t rows = t.numel() / c;
  Tensor out(t.shape());
  const double* p = t.data();
  double* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = p + r * c;
    double* orow = po + r * c;
    double mx = xr[0];
    for (int64_t i = 1; i < c; ++i) mx = std::max(mx, xr[i]);
    double s = 0.0;
    for (int64_t i = 0; i < c; ++i) {
      orow[i] = std::exp(xr[i] - mx);
      s += orow[i];
    }
    double inv = 1.0 / s;
    for (int64_t i = 0; i < c; ++i) orow[i] *= inv;
  }
  return finish(std::move(out), {a}, [a, rows, c](Node& self) {
    if (!rg(a)) return;
    a->ensure_grad();
    const double* g = self.grad.data();
    const double* y = self.val.data();
    double* ga = a->grad.data();
    for (int64_t r = 0; r < rows; ++r) {
      const double* gr = g + r * c;
      const double* yr = y + r * c;
      double dot = 0.0;
      for (int64_t i = 0; i < c; ++i) dot += gr[i] * yr[i];
      double* gar = ga + r * c;
      for (int64_t i = 0; i < c; ++i) gar[i] += (gr[i] - dot) * yr[i];
    }
  });
}

Value log_softmax_lastdim(const Value& a) {
  const Tensor& t = a->val;
  const int64_t c = t.dim(t.rank() - 1);
  const int64_t rows = t.numel() / c;
  Tensor out(t.shape());
  const double* p = t.data();
  double* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = p + r * c;
    double* orow = po + r * c;
    double mx = xr[0];
    for (int64_t i = 1; i < c; ++i) mx = std::max(mx, xr[i]);
    double s = 0.0;
    for (int64_t i = 0; i < c; ++i) s += std::exp(xr[i] - mx);
    double lse = mx + std::log(s);
    for (int64_t i = 0; i < c; ++i) orow[i] = xr[i] - lse;
  }
  return finish(std::move(out), {a}, [a, rows, c](Node& self) {
    if (!rg(a)) return;
    a->ensure_grad();
    const double* g = self.grad.data();
    const double* y = self.val.data();
    double* ga = a->grad.data();
    for (int64_t r = 0; r < rows; ++r) {
      const double* gr = g + r * c;
      const double* yr = y + r * c;
      double gsum = 0.0;
      for (int64_t i = 0; i < c; ++i) gsum += gr[i];
      double* gar = ga + r * c;
      for (int64_t i = 0; i < c; ++i)
        gar[i] += gr[i] - std::exp(yr[i]) * gsum;
    }
  });
}

Value batch_norm1d(const Value& x, const Value& gamma, const Value& beta,
                   Tensor& running_mean, Tensor& running_var, bool training,
                   double momentum, double eps) {
  const Tensor& t = x->val;
  if (t.rank() != 3) throw NumericError("batch_norm1d expects [N,C,T]");
  const int64_t n = t.dim(0), c = t.dim(1), tt = t.dim(2);
  const int64_t m = n * tt;
  Tensor mean({c}), var({c});
  if (training) {
    for (int64_t ci = 0; ci < c; ++ci) {
      double s = 0.0;
      for (int64_t b = 0; b < n; ++b) {
        const double* row = t.data() + (b * c + ci) * tt;
        for (int64_t i = 0; i < tt; ++i) s += row[i];
      }
      mean[ci] = s / static_cast<double>(m);
      double v = 0.0;
      for (int64_t b = 0; b < n; ++b) {
        const double* row = t.data() + (b * c + ci) * tt;
        for (int64_t i = 0; i < tt; ++i) {
          double d = row[i] - mean[ci];
          v += d * d;
        }
      }
      var[ci] = v / static_cast<double>(m);
    }
    // unbiased variance feeds the running buffer
    double corr = m > 1 ? static_cast<double>(m) / static_cast<double>(m - 1)
                        : 1.0;
    for (int64_t ci = 0; ci < c; ++ci) {
      running_mean[ci] = (1.0 - momentum) * running_mean[ci] + momentum * mean[ci];
      running_var[ci] =
          (1.0 - momentum) * running_var[ci] + momentum * var[ci] * corr;
    }
  } else {
    mean = running_mean;
    var = running_var;
  }
  Tensor inv_std({c});
  for (int64_t ci = 0; ci < c; ++ci) inv_std[ci] = 1.0 / std::sqrt(var[ci] + eps);

  Tensor out(t.shape());
  const double* pg = gamma->val.data();
  const double* pb = beta->val.data();
  for (int64_t b = 0; b < n; ++b)
    for (int64_t ci = 0; ci < c; ++ci) {
      const double* row = t.data() + (b * c + ci) * tt;
      double* orow = out.data() + (b * c + ci) * tt;
      const double mu = mean[ci], is = inv_std[ci], ga = pg[ci], be = pb[ci];
      for (int64_t i = 0; i < tt; ++i) orow[i] = ga * (row[i] - mu) * is + be;
    }

  auto mean_c = std::make_shared<Tensor>(std::move(mean));
  auto inv_c = std::make_shared<Tensor>(std::move(inv_std));
  return finish(std::move(out), {x, gamma, beta},
                [x, gamma, beta, mean_c, inv_c, training, n, c, tt](Node& self) {
    const int64_t m = n * tt;
    const double* g = self.grad.data();
    const double* px = x->val.data();
    const double* pg = gamma->val.data();
    for (int64_t ci = 0; ci < c; ++ci) {
      const double mu = (*mean_c)[ci], is = (*inv_c)[ci], ga = pg[ci];
      double sum_g = 0.0, sum_gx = 0.0;
      for (int64_t b = 0; b < n; ++b) {
        const double* grow = g + (b * c + ci) * tt;
        const double* xrow = px + (b * c + ci) * tt;
        for (int64_t i = 0; i < tt; ++i) {
          sum_g += grow[i];
          sum_gx += grow[i] * (xrow[i] - mu) * is;
        }
      }
      if (rg(gamma)) {
        gamma->ensure_grad();
        gamma->grad[ci] += sum_gx;
      }
      if (rg(beta)) {
        beta->ensure_grad();
        beta->grad[ci] += sum_g;
      }
      if (rg(x)) {
        x->ensure_grad();
        double* gx = x->grad.data();
        if (training) {
          const double inv_m = 1.0 / static_cast<double>(m);
          for (int64_t b = 0; b < n; ++b) {
            const double* grow = g + (b * c + ci) * tt;
            const double* xrow = px + (b * c + ci) * tt;
            double* gxrow = gx + (b * c + ci) * tt;
            for (int64_t i = 0; i < tt; ++i) {
              double xh = (xrow[i] - mu) * is;
              gxrow[i] += ga * is *
                          (grow[i] - inv_m * sum_g - inv_m * xh * sum_gx);
            }
          }
        } else {
          for (int64_t b = 0; b < n; ++b) {
            const double* grow = g + (b * c + ci) * tt;
            double* gxrow = gx + (b * c + ci) * tt;
            for (int64_t i = 0; i < tt; ++i) gxrow[i] += ga * is * grow[i];
          }
        }
      }
    }
  });
}

Value layer_norm_lastdim(const Value& x, const Value& gamma, const Value& beta,
                         double eps) {
  const Tensor& t = x->val;
  const int64_t d = t.dim(t.rank() - 1);
  const int64_t rows = t.numel() / d;
  Tensor out(t.shape());
  Tensor mu({rows}), inv({rows});
  const double* p = t.data();
  const double* pg = gamma->val.data();
  const double* pb = beta->val.data();
  double* po = out.data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = p + r * d;
    double m = 0.0;
    for (int64_t i = 0; i < d; ++i) m += xr[i];
    m /= static_cast<double>(d);
    double v = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      double dd = xr[i] - m;
      v += dd * dd;
    }
    v /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(v + eps);
    mu[r] = m;
    inv[r] = is;
    double* orow = po + r * d;
    for (int64_t i = 0; i < d; ++i)
      orow[i] = pg[i] * (xr[i] - m) * is + pb[i];
  }
  auto mu_c = std::make_shared<Tensor>(std::move(mu));
  auto inv_c = std::make_shared<Tensor>(std::move(inv));
  return finish(std::move(out), {x, gamma, beta},
                [x, gamma, beta, mu_c, inv_c, rows, d](Node& self) {
    const double* g = self.grad.data();
    const double* px = x->val.data();
    const double* pg = gamma->val.data();
    for (int64_t r = 0; r < rows; ++r) {
      const double* gr = g + r * d;
      const double* xr = px + r * d;
      const double m = (*mu_c)[r], is = (*inv_c)[r];
      double sum_gg = 0.0, sum_ggx = 0.0;
      for (int64_t i = 0; i < d; ++i) {
        double xh = (xr[i] - m) * is;
        double gg = gr[i] * pg[i];
        sum_gg += gg;
        sum_ggx += gg * xh;
      }
      if (rg(gamma) || rg(beta)) {
        if (rg(gamma)) gamma->ensure_grad();
        if (rg(beta)) beta->ensure_grad();
        for (int64_t i = 0; i < d; ++i) {
          double xh = (xr[i] - m) * is;
          if (rg(gamma)) gamma->grad[i] += gr[i] * xh;
          if (rg(beta)) beta->grad[i] += gr[i];
        }
      }
      if (rg(x)) {
        x->ensure_grad();
        double* gx = x->grad.data() + r * d;
        const double inv_d = 1.0 / static_cast<double>(d);
        for (int64_t i = 0; i < d; ++i) {
          double xh = (xr[i] - m) * is;
          double gg = gr[i] * pg[i];
          gx[i] += is * (gg - inv_d * sum_gg - inv_d * xh * sum_ggx);
        }
      }
    }
  });
}

Value pick_lastdim(const Value& x, const std::vector<int64_t>& idx) {
  const Tensor& t = x->val;
  const int64_t c = t.dim(t.rank() - 1);
  const int64_t rows = t.numel() / c;
  if (static_cast<int64_t>(idx.size()) != rows)
    throw NumericError("pick_lastdim index count mismatch");
  std::vector<int64_t> oshape(t.shape().begin(), t.shape().end() - 1);
  if (oshape.empty()) oshape.push_back(1);
  Tensor out(oshape);
  for (int64_t r = 0; r < rows; ++r) {
    if (idx[r] < 0 || idx[r] >= c) throw NumericError("pick_lastdim out of range");
    out[r] = t.data()[r * c + idx[r]];
  }
  return finish(std::move(out), {x}, [x, idx, rows, c](Node& self) {
    if (!rg(x)) return;
    x->ensure_grad();
    for (int64_t r = 0; r < rows; ++r)
      x->grad.data()[r * c + idx[r]] += self.grad[r];
  });
}

Value index_select0(const Value& x, const std::vector<int64_t>& idx) {
  const Tensor& t = x->val;
  const int64_t rows = t.dim(0);
  const int64_t inner = t.numel() / rows;
  std::vector<int64_t> oshape = t.shape();
  oshape[0] = static_cast<int64_t>(idx.size());
  Tensor out(oshape);
  for (size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] >= rows)
      throw NumericError("index_select0 out of range");
    std::copy(t.data() + idx[r] * inner, t.data() + (idx[r] + 1) * inner,
              out.data() + static_cast<int64_t>(r) * inner);
  }
  return finish(std::move(out), {x}, [x, idx, inner](Node& self) {
    if (!rg(x)) return;
    x->ensure_grad();
    for (size_t r = 0; r < idx.size(); ++r) {
      const double* gs = self.grad.data() + static_cast<int64_t>(r) * inner;
      double* gd = x->grad.data() + idx[r] * inner;
      for (int64_t i = 0; i < inner; ++i) gd[i] += gs[i];
    }
  });
}

Value add_at_lastdim(const Value& x, const std::vector<int64_t>& idx,
                     const Value& v) {
  const Tensor& t = x->val;
  const int64_t c = t.dim(t.rank() - 1);
  const int64_t rows = t.numel() / c;
  if (static_cast<int64_t>(idx.size()) != rows || v->val.numel() != rows)
    throw NumericError("add_at_lastdim size mismatch");
  Tensor out = t;
  for (int64_t r = 0; r < rows; ++r) out.data()[r * c + idx[r]] += v->val[r];
  return finish(std::move(out), {x, v}, [x, v, idx, rows, c](Node& self) {
    if (rg(x)) x->accumulate(self.grad);
    if (rg(v)) {
      v->ensure_grad();
      for (int64_t r = 0; r < rows; ++r)
        v->grad[r] += self.grad.data()[r * c + idx[r]];
    }
  });
}

Value relative_bias_matrix(const Value& bias, int64_t t_len, int clip) {
  const Tensor& b = bias->val;
  if (b.numel() != 2 * clip + 1)
    throw NumericError("relative_bias_matrix: bias size != 2*clip+1");
  Tensor out({t_len, t_len});
  for (int64_t t = 0; t < t_len; ++t)
    for (int64_t u = 0; u < t_len; ++u) {
      int64_t rel = std::clamp<int64_t>(u - t, -clip, clip) + clip;
      out.at2(t, u) = b[rel];
    }
  return finish(std::move(out), {bias}, [bias, t_len, clip](Node& self) {
    if (!rg(bias)) return;
    bias->ensure_grad();
    for (int64_t t = 0; t < t_len; ++t)
      for (int64_t u = 0; u < t_len; ++u) {
        int64_t rel = std::clamp<int64_t>(u - t, -clip, clip) + clip;
        bias->grad[rel] += self.grad.at2(t, u);
      }
  });
}

Value gradient_reversal(const Value& x) {
  Tensor out = x->val;
  return finish(std::move(out), {x}, [x](Node& self) {
    if (!rg(x)) return;
    x->ensure_grad();
    const int64_t n = self.val.numel();
    const double* g = self.grad.data();
    double* gx = x->grad.data();
    for (int64_t i = 0; i < n; ++i) gx[i] -= g[i];
  });
}

void backward(const Value& root) {
  if (root->val.numel() != 1)
    throw NumericError("backward requires a scalar root");
  if (!root->requires_grad) return;
  // iterative post-order DFS; children processed before parents in reverse
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, child] = stack.back();
    if (child < node->parents.size()) {
      Node* p = node->parents[child].get();
      ++child;
      if (p->requires_grad && seen.insert(p).second)
        stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->back && n->grad_ready) n->back(*n);
  }
}

}  // namespace kws::ag
