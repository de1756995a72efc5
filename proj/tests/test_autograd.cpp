// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "kws/autograd.hpp"
#include "kws/nn.hpp"
#include "support/gradcheck.hpp"

using namespace kws;
using ag::Value;
using test::grad_check;
using test::random_tensor;

namespace {

// Scalarize an arbitrary output so every element contributes a distinct
// weight to the loss; catches transposed/miswired gradients.
Value weighted_sum(const Value& v, uint64_t seed = 7) {
  Tensor w = random_tensor(v->val.shape(), seed, 0.1, 1.1);
  return ag::sum_all(ag::mul(v, ag::constant(w)));
}

}  // namespace

TEST_CASE("elementwise ops gradients") {
  for (uint64_t s = 0; s < 3; ++s) {
    Value a = ag::param(random_tensor({3, 4}, 100 + s, 0.2, 1.5));
    Value b = ag::param(random_tensor({3, 4}, 200 + s, 0.2, 1.5));
    std::vector<std::pair<std::string, Value>> ps = {{"a", a}, {"b", b}};
    auto res = grad_check(
        [&] {
          Value z = ag::add(ag::mul(a, b), ag::div(a, b));
          z = ag::sub(z, ag::scale(ag::square(b), 0.3));
          z = ag::add(z, ag::exp_v(ag::neg(a)));
          z = ag::add(z, ag::log_v(ag::add_scalar(ag::sqrt_v(b), 1.0)));
          z = ag::add(z, ag::silu(ag::tanh_v(a)));
          z = ag::add(z, ag::sigmoid(ag::leaky_relu(b, 0.1)));
          return weighted_sum(z, s);
        },
        ps);
    CHECK(res.max_rel_err < 1e-6);
  }
}

TEST_CASE("broadcast binary ops gradients") {
  Value a = ag::param(random_tensor({2, 3, 4}, 11, 0.5, 1.5));
  Value b = ag::param(random_tensor({3, 1}, 12, 0.5, 1.5));
  Value c = ag::param(random_tensor({1, 1, 4}, 13, 0.5, 1.5));
  std::vector<std::pair<std::string, Value>> ps = {{"a", a}, {"b", b}, {"c", c}};
  auto res = grad_check(
      [&] {
        Value z = ag::mul(a, b);
        z = ag::add(z, ag::div(b, c));
        return weighted_sum(z);
      },
      ps);
  CHECK(res.max_rel_err < 1e-6);

  // two-sided broadcast [n,1] x [1,n]
  Value u = ag::param(random_tensor({5, 1}, 14));
  Value v = ag::param(random_tensor({1, 5}, 15));
  std::vector<std::pair<std::string, Value>> ps2 = {{"u", u}, {"v", v}};
  auto res2 = grad_check([&] { return weighted_sum(ag::add(u, v)); }, ps2);
  CHECK(res2.max_rel_err < 1e-6);
}

TEST_CASE("matmul and linear gradients") {
  Value a = ag::param(random_tensor({4, 3}, 21));
  Value b = ag::param(random_tensor({3, 5}, 22));
  std::vector<std::pair<std::string, Value>> ps = {{"a", a}, {"b", b}};
  auto res = grad_check([&] { return weighted_sum(ag::matmul(a, b)); }, ps);
  CHECK(res.max_rel_err < 1e-6);

  Value x = ag::param(random_tensor({2, 6, 3}, 23));
  Value w = ag::param(random_tensor({4, 3}, 24));
  Value bias = ag::param(random_tensor({4}, 25));
  std::vector<std::pair<std::string, Value>> ps2 = {
      {"x", x}, {"w", w}, {"b", bias}};
  auto res2 = grad_check(
      [&] { return weighted_sum(ag::linear(x, w, bias)); }, ps2);
  CHECK(res2.max_rel_err < 1e-6);
}

TEST_CASE("conv1d gradients across stride/pad/dilation/groups") {
  struct Cfg {
    int stride, pad, dil, groups;
  };
  for (Cfg cfg : {Cfg{1, 2, 1, 1}, Cfg{2, 1, 1, 1}, Cfg{1, 3, 2, 1},
                  Cfg{3, 2, 1, 2}, Cfg{1, 0, 1, 4}}) {
    Value x = ag::param(random_tensor({2, 4, 11}, 31 + cfg.stride));
    Value w = ag::param(
        random_tensor({4, 4 / cfg.groups, 3}, 41 + cfg.pad));
    Value b = ag::param(random_tensor({4}, 51 + cfg.dil));
    std::vector<std::pair<std::string, Value>> ps = {
        {"x", x}, {"w", w}, {"b", b}};
    auto res = grad_check(
        [&] {
          return weighted_sum(
              ag::conv1d(x, w, b, cfg.stride, cfg.pad, cfg.dil, cfg.groups));
        },
        ps);
    CAPTURE(cfg.stride);
    CAPTURE(cfg.pad);
    CHECK(res.max_rel_err < 1e-6);
  }
}

TEST_CASE("softmax, log-softmax, norm layers gradients") {
  Value x = ag::param(random_tensor({3, 6}, 61, -2.0, 2.0));
  std::vector<std::pair<std::string, Value>> ps = {{"x", x}};
  auto res = grad_check(
      [&] { return weighted_sum(ag::softmax_lastdim(x)); }, ps);
  CHECK(res.max_rel_err < 1e-6);
  auto res2 = grad_check(
      [&] { return weighted_sum(ag::log_softmax_lastdim(x)); }, ps);
  CHECK(res2.max_rel_err < 1e-6);

  nn::LayerNorm ln("ln", 5, 6);
  Value y = ag::param(random_tensor({4, 6}, 62, -1.0, 1.0));
  auto ln_params = ln.named_params();
  ln_params.emplace_back("y", y);
  auto res3 = grad_check([&] { return weighted_sum(ln.forward(y)); }, ln_params);
  CHECK(res3.max_rel_err < 1e-6);

  nn::BatchNorm1d bn("bn", 5, 3);
  Value z = ag::param(random_tensor({2, 3, 7}, 63, -1.0, 1.0));
  auto bn_params = bn.named_params();
  bn_params.emplace_back("z", z);
  bn.set_training(true);
  auto res4 = grad_check([&] { return weighted_sum(bn.forward(z)); }, bn_params);
  CHECK(res4.max_rel_err < 1e-5);
  bn.set_training(false);
  auto res5 = grad_check([&] { return weighted_sum(bn.forward(z)); }, bn_params);
  CHECK(res5.max_rel_err < 1e-6);
}

TEST_CASE("batch norm tracks running statistics") {
  nn::BatchNorm1d bn("bn", 5, 2, /*momentum=*/1.0);
  Tensor x({1, 2, 4});
  for (int64_t i = 0; i < 4; ++i) {
    x.at3(0, 0, i) = static_cast<double>(i);      // mean 1.5
    x.at3(0, 1, i) = 2.0 * static_cast<double>(i);  // mean 3.0
  }
  bn.set_training(true);
  (void)bn.forward(ag::constant(x));
  auto buffers = bn.named_buffers();
  REQUIRE(buffers.size() == 2);
  // sorted: running_mean before running_var
  CHECK((*buffers[0].second)[0] == doctest::Approx(1.5));
  CHECK((*buffers[0].second)[1] == doctest::Approx(3.0));
  // unbiased variance of {0,1,2,3} = 5/3
  CHECK((*buffers[1].second)[0] == doctest::Approx(5.0 / 3.0));
}

TEST_CASE("shape ops gradients") {
  Value x = ag::param(random_tensor({2, 3, 4}, 71));
  std::vector<std::pair<std::string, Value>> ps = {{"x", x}};
  auto res = grad_check(
      [&] {
        Value z = ag::transpose12(x);
        z = ag::reshape(z, {4, 6});
        z = ag::slice(z, 0, 1, 2);
        Value c = ag::concat({z, ag::scale(z, 2.0)}, 1);
        return weighted_sum(ag::sum_axis(c, 1, false));
      },
      ps);
  CHECK(res.max_rel_err < 1e-6);

  Value y = ag::param(random_tensor({5, 4}, 72));
  std::vector<std::pair<std::string, Value>> ps2 = {{"y", y}};
  auto res2 = grad_check(
      [&] {
        Value z = ag::index_select0(y, {3, 0, 3});
        Value t = ag::transpose2d(y);  // [4,5]
        return ag::add(weighted_sum(ag::mean_axis(z, 0, true)),
                       weighted_sum(t, 9));
      },
      ps2);
  CHECK(res2.max_rel_err < 1e-6);
}

TEST_CASE("indexing ops gradients") {
  Value x = ag::param(random_tensor({4, 5}, 81));
  Value v = ag::param(random_tensor({4}, 82));
  std::vector<std::pair<std::string, Value>> ps = {{"x", x}, {"v", v}};
  std::vector<int64_t> idx = {0, 2, 4, 1};
  auto res = grad_check(
      [&] {
        Value z = ag::add_at_lastdim(x, idx, v);
        return weighted_sum(ag::pick_lastdim(z, idx));
      },
      ps);
  CHECK(res.max_rel_err < 1e-6);

  Value bias = ag::param(random_tensor({5}, 83));
  std::vector<std::pair<std::string, Value>> ps2 = {{"bias", bias}};
  auto res2 = grad_check(
      [&] { return weighted_sum(ag::relative_bias_matrix(bias, 6, 2)); }, ps2);
  CHECK(res2.max_rel_err < 1e-6);
}

TEST_CASE("gradient reversal forward identity and backward negation") {
  Tensor t = Tensor::from_flat({2}, {1.5, -2.0});
  Value x = ag::param(t);
  Value y = ag::gradient_reversal(x);
  CHECK(y->val[0] == 1.5);
  CHECK(y->val[1] == -2.0);

  // f = sum(x^2) through GRL: upstream grad must be -2x
  Value loss = ag::sum_all(ag::square(ag::gradient_reversal(x)));
  ag::backward(loss);
  CHECK(x->grad[0] == doctest::Approx(-3.0));
  CHECK(x->grad[1] == doctest::Approx(4.0));

  // two GRLs cancel
  x->grad = Tensor();
  x->grad_ready = false;
  Value loss2 = ag::sum_all(
      ag::square(ag::gradient_reversal(ag::gradient_reversal(x))));
  ag::backward(loss2);
  CHECK(x->grad[0] == doctest::Approx(3.0));
  CHECK(x->grad[1] == doctest::Approx(-4.0));
}

TEST_CASE("diamond reuse accumulates gradients once per path") {
  Value x = ag::param(Tensor::from_flat({1}, {2.0}));
  Value y = ag::mul(x, x);           // x^2
  Value z = ag::add(y, ag::scale(y, 2.0));  // 3 x^2
  ag::backward(z);
  CHECK(x->grad[0] == doctest::Approx(12.0));
}

TEST_CASE("no-grad mode builds leaf constants") {
  Value x = ag::param(Tensor::from_flat({2}, {1.0, 2.0}));
  ag::NoGradGuard guard;
  Value y = ag::square(x);
  CHECK_FALSE(y->requires_grad);
  CHECK(y->parents.empty());
}
