// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#ifndef KWS_NN_HPP_
#define KWS_NN_HPP_

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "kws/autograd.hpp"
#include "kws/common.hpp"

namespace kws::nn {

// Base for parameterized layers. Parameters are addressed by dotted path;
// initialization draws from an RNG derived from (seed, full parameter name),
// so two models sharing a submodule path and seed initialize identically
// regardless of what else they contain.
class Module {
 public:
  Module(std::string path, uint64_t seed) : path_(std::move(path)), seed_(seed) {}
  virtual ~Module() = default;

  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  const std::string& path() const { return path_; }
  uint64_t seed() const { return seed_; }

  // Sorted by name; stable across runs.
  std::vector<std::pair<std::string, ag::Value>> named_params() const;
  std::vector<std::pair<std::string, Tensor*>> named_buffers();

  void set_training(bool on);
  bool training() const { return training_; }
  int64_t param_count() const;
  void zero_grad();

 protected:
  enum class Init { kZeros, kOnes, kUniformFanIn, kNormalSmall };

  ag::Value make_param(const std::string& name, std::vector<int64_t> shape,
                       Init init, int64_t fan_in = 0);
  Tensor* make_buffer(const std::string& name, Tensor init);
  void adopt(Module* child);  // non-owning registration for traversal

  std::string child_path(const std::string& name) const {
    return path_.empty() ? name : path_ + "." + name;
  }

 private:
  std::string path_;
  uint64_t seed_;
  bool training_ = true;
  std::map<std::string, ag::Value> params_;
  std::map<std::string, std::unique_ptr<Tensor>> buffers_;
  std::vector<Module*> children_;
};

class Linear : public Module {
 public:
  Linear(std::string path, uint64_t seed, int64_t in, int64_t out,
         bool bias = true);
  ag::Value forward(const ag::Value& x) const;
  int64_t in_dim() const { return in_; }
  int64_t out_dim() const { return out_; }
  ag::Value weight() const { return w_; }
  ag::Value bias() const { return b_; }

 private:
  int64_t in_, out_;
  ag::Value w_, b_;
};

class Conv1d : public Module {
 public:
  Conv1d(std::string path, uint64_t seed, int64_t in_ch, int64_t out_ch,
         int kernel, int stride = 1, int pad = 0, int dilation = 1,
         int groups = 1, bool bias = true);
  ag::Value forward(const ag::Value& x) const;
  int64_t out_frames(int64_t t_in) const;
  int64_t in_ch() const { return in_ch_; }
  int64_t out_ch() const { return out_ch_; }
  int kernel() const { return kernel_; }
  int stride() const { return stride_; }
  ag::Value weight() const { return w_; }
  ag::Value bias() const { return b_; }

 private:
  int64_t in_ch_, out_ch_;
  int kernel_, stride_, pad_, dilation_, groups_;
  ag::Value w_, b_;
};

class BatchNorm1d : public Module {
 public:
  BatchNorm1d(std::string path, uint64_t seed, int64_t channels,
              double momentum = 0.1, double eps = 1e-5);
  ag::Value forward(const ag::Value& x) const;
  ag::Value gamma() const { return gamma_; }
  ag::Value beta() const { return beta_; }

 private:
  int64_t channels_;
  double momentum_, eps_;
  ag::Value gamma_, beta_;
  Tensor* running_mean_;
  Tensor* running_var_;
};

class LayerNorm : public Module {
 public:
  LayerNorm(std::string path, uint64_t seed, int64_t dim, double eps = 1e-5);
  ag::Value forward(const ag::Value& x) const;

 private:
  double eps_;
  ag::Value gamma_, beta_;
};

}  // namespace kws::nn

#endif  // KWS_NN_HPP_
