// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0
//
// Frame aggregation into a fixed-length utterance embedding. Two strategies:
// attentive statistics pooling (ASP) and spectro-temporal graph attentive
// pooling (GAP) with ratio-based top-k node selection.

#ifndef KWS_POOLING_HPP_
#define KWS_POOLING_HPP_

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "kws/nn.hpp"

namespace kws {

struct PoolingConfig {
  std::string kind = "asp";  // asp | gap
  int64_t embedding_dim = 128;

  // ASP
  int64_t asp_bottleneck = 64;
  bool asp_context = false;  // concat global mean/std to each frame's scorer input

  // GAP
  double ratio_spectral = 0.71;
  double ratio_temporal = 0.86;
  double ratio_spectro_temporal = 0.71;
  int64_t gap_attention_dim = 64;
  int gap_spectral_groups = 8;
  int gap_temporal_chunk = 4;

  void validate() const;
  nlohmann::json to_json() const;
  static PoolingConfig from_json(const nlohmann::json& j);
};

// Retained node count after a ratio pool.
int64_t retained_nodes(double ratio, int64_t node_count);

class Pooler : public nn::Module {
 public:
  using nn::Module::Module;
  // frames: [N, D, T'] -> embeddings [N, d]
  virtual ag::Value forward(const ag::Value& frames) = 0;
  virtual int64_t embedding_dim() const = 0;
  // Single-utterance convenience: [T', D] row-major frames, no grad.
  Tensor pool_single(const Tensor& frames);
};

class AspPool : public Pooler {
 public:
  AspPool(std::string path, uint64_t seed, int64_t in_dim,
          const PoolingConfig& cfg);
  ag::Value forward(const ag::Value& frames) override;
  int64_t embedding_dim() const override { return cfg_.embedding_dim; }

  // Attention-weighted mean and standard deviation, before projection.
  // Exposed for oracle comparison in tests.
  std::pair<ag::Value, ag::Value> weighted_stats(const ag::Value& frames) const;

 private:
  int64_t in_dim_;
  PoolingConfig cfg_;
  std::unique_ptr<nn::Conv1d> score_hidden_, score_out_;
  std::unique_ptr<nn::Linear> proj_;
};

// One fully connected graph attention block followed by ratio top-k pooling.
// Retained features are gated by 1 + tanh(score) so the learned score
// projection receives gradients; a zero projection leaves features unchanged.
class GatTopK : public nn::Module {
 public:
  GatTopK(std::string path, uint64_t seed, int64_t feat_dim, double ratio);
  ag::Value forward(const ag::Value& nodes) const;  // [n,F] -> [k,F]

 private:
  int64_t feat_dim_;
  double ratio_;
  std::unique_ptr<nn::Linear> w_;
  ag::Value a_src_, a_dst_, score_;
};

class GapPool : public Pooler {
 public:
  GapPool(std::string path, uint64_t seed, int64_t in_dim,
          const PoolingConfig& cfg);
  ag::Value forward(const ag::Value& frames) override;
  int64_t embedding_dim() const override { return cfg_.embedding_dim; }
  ag::Value forward_single(const ag::Value& frames_dt) const;  // [D,T] -> [d]

 private:
  ag::Value spectral_nodes(const ag::Value& frames_dt) const;  // [S, F]
  ag::Value temporal_nodes(const ag::Value& frames_dt) const;  // [nt, F]

  int64_t in_dim_;
  PoolingConfig cfg_;
  std::unique_ptr<nn::Linear> spec_proj_, temp_proj_, out_proj_;
  std::unique_ptr<GatTopK> gat_spec_, gat_temp_, gat_st_;
};

std::unique_ptr<Pooler> build_pooler(const PoolingConfig& cfg, int64_t in_dim,
                                     uint64_t seed,
                                     const std::string& path = "pooler");

}  // namespace kws

#endif  // KWS_POOLING_HPP_
