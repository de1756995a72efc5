// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#include "kws/nn.hpp"

#include <algorithm>
#include <cmath>

namespace kws::nn {

std::vector<std::pair<std::string, ag::Value>> Module::named_params() const {
  std::vector<std::pair<std::string, ag::Value>> out(params_.begin(),
                                                     params_.end());
  for (const Module* c : children_) {
    auto sub = c->named_params();
    out.insert(out.end(), sub.begin(), sub.end());
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

std::vector<std::pair<std::string, Tensor*>> Module::named_buffers() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (auto& [name, t] : buffers_) out.emplace_back(name, t.get());
  for (Module* c : children_) {
    auto sub = c->named_buffers();
    out.insert(out.end(), sub.begin(), sub.end());
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

void Module::set_training(bool on) {
  training_ = on;
  for (Module* c : children_) c->set_training(on);
}

int64_t Module::param_count() const {
  int64_t n = 0;
  for (const auto& [name, v] : named_params()) n += v->val.numel();
  return n;
}

void Module::zero_grad() {
  for (auto& [name, v] : named_params()) {
    v->grad = Tensor();
    v->grad_ready = false;
  }
}

ag::Value Module::make_param(const std::string& name,
                             std::vector<int64_t> shape, Init init,
                             int64_t fan_in) {
  std::string full = child_path(name);
  Tensor t(shape);
  Rng rng(mix_seed(seed_, full));
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      t.fill(1.0);
      break;
    case Init::kUniformFanIn: {
      double bound = 1.0 / std::sqrt(static_cast<double>(std::max<int64_t>(1, fan_in)));
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
      break;
    }
    case Init::kNormalSmall:
      for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, 0.1);
      break;
  }
  auto v = ag::param(std::move(t));
  params_.emplace(full, v);
  return v;
}

Tensor* Module::make_buffer(const std::string& name, Tensor init) {
  auto t = std::make_unique<Tensor>(std::move(init));
  Tensor* raw = t.get();
  buffers_.emplace(child_path(name), std::move(t));
  return raw;
}

void Module::adopt(Module* child) { children_.push_back(child); }

Linear::Linear(std::string path, uint64_t seed, int64_t in, int64_t out,
               bool bias)
    : Module(std::move(path), seed), in_(in), out_(out) {
  w_ = make_param("weight", {out, in}, Init::kUniformFanIn, in);
  if (bias) b_ = make_param("bias", {out}, Init::kUniformFanIn, in);
}

ag::Value Linear::forward(const ag::Value& x) const {
  return ag::linear(x, w_, b_);
}

Conv1d::Conv1d(std::string path, uint64_t seed, int64_t in_ch, int64_t out_ch,
               int kernel, int stride, int pad, int dilation, int groups,
               bool bias)
    : Module(std::move(path), seed),
      in_ch_(in_ch),
      out_ch_(out_ch),
      kernel_(kernel),
      stride_(stride),
      pad_(pad),
      dilation_(dilation),
      groups_(groups) {
  check_config(in_ch % groups == 0 && out_ch % groups == 0,
               "conv channels not divisible by groups at " + this->path());
  int64_t fan_in = (in_ch / groups) * kernel;
  w_ = make_param("weight", {out_ch, in_ch / groups, kernel},
                  Init::kUniformFanIn, fan_in);
  if (bias) b_ = make_param("bias", {out_ch}, Init::kUniformFanIn, fan_in);
}

ag::Value Conv1d::forward(const ag::Value& x) const {
  return ag::conv1d(x, w_, b_, stride_, pad_, dilation_, groups_);
}

int64_t Conv1d::out_frames(int64_t t_in) const {
  int64_t span = static_cast<int64_t>(kernel_ - 1) * dilation_ + 1;
  return (t_in + 2 * pad_ - span) / stride_ + 1;
}

BatchNorm1d::BatchNorm1d(std::string path, uint64_t seed, int64_t channels,
                         double momentum, double eps)
    : Module(std::move(path), seed),
      channels_(channels),
      momentum_(momentum),
      eps_(eps) {
  gamma_ = make_param("gamma", {channels}, Init::kOnes);
  beta_ = make_param("beta", {channels}, Init::kZeros);
  running_mean_ = make_buffer("running_mean", Tensor::zeros({channels}));
  running_var_ = make_buffer("running_var", Tensor::full({channels}, 1.0));
}

ag::Value BatchNorm1d::forward(const ag::Value& x) const {
  return ag::batch_norm1d(x, gamma_, beta_, *running_mean_, *running_var_,
                          training(), momentum_, eps_);
}

LayerNorm::LayerNorm(std::string path, uint64_t seed, int64_t dim, double eps)
    : Module(std::move(path), seed), eps_(eps) {
  gamma_ = make_param("gamma", {dim}, Init::kOnes);
  beta_ = make_param("beta", {dim}, Init::kZeros);
}

ag::Value LayerNorm::forward(const ag::Value& x) const {
  return ag::layer_norm_lastdim(x, gamma_, beta_, eps_);
}

}  // namespace kws::nn
