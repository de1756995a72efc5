// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#include "kws/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace kws {

using ag::Value;

void PoolingConfig::validate() const {
  check_config(kind == "asp" || kind == "gap",
               "pooling.kind must be asp or gap, got '" + kind + "'");
  check_config(embedding_dim >= 1, "pooling.embedding_dim must be >= 1");
  check_config(asp_bottleneck >= 1, "pooling.asp_bottleneck must be >= 1");
  for (double r : {ratio_spectral, ratio_temporal, ratio_spectro_temporal})
    check_config(r > 0.0 && r <= 1.0,
                 "pooling ratio " + std::to_string(r) + " outside (0,1]");
  check_config(gap_attention_dim >= 1, "pooling.gap_attention_dim must be >= 1");
  check_config(gap_spectral_groups >= 1 && gap_temporal_chunk >= 1,
               "gap node grouping fields must be >= 1");
}

nlohmann::json PoolingConfig::to_json() const {
  return nlohmann::json{{"kind", kind},
                        {"embedding_dim", embedding_dim},
                        {"asp_bottleneck", asp_bottleneck},
                        {"asp_context", asp_context},
                        {"ratio_spectral", ratio_spectral},
                        {"ratio_temporal", ratio_temporal},
                        {"ratio_spectro_temporal", ratio_spectro_temporal},
                        {"gap_attention_dim", gap_attention_dim},
                        {"gap_spectral_groups", gap_spectral_groups},
                        {"gap_temporal_chunk", gap_temporal_chunk}};
}

PoolingConfig PoolingConfig::from_json(const nlohmann::json& j) {
  PoolingConfig c;
  c.kind = j.value("kind", c.kind);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.asp_bottleneck = j.value("asp_bottleneck", c.asp_bottleneck);
  c.asp_context = j.value("asp_context", c.asp_context);
  c.ratio_spectral = j.value("ratio_spectral", c.ratio_spectral);
  c.ratio_temporal = j.value("ratio_temporal", c.ratio_temporal);
  c.ratio_spectro_temporal =
      j.value("ratio_spectro_temporal", c.ratio_spectro_temporal);
  c.gap_attention_dim = j.value("gap_attention_dim", c.gap_attention_dim);
  c.gap_spectral_groups = j.value("gap_spectral_groups", c.gap_spectral_groups);
  c.gap_temporal_chunk = j.value("gap_temporal_chunk", c.gap_temporal_chunk);
  return c;
}

int64_t retained_nodes(double ratio, int64_t node_count) {
  int64_t k = static_cast<int64_t>(
      std::ceil(ratio * static_cast<double>(node_count)));
  return std::max<int64_t>(1, std::min(k, node_count));
}

Tensor Pooler::pool_single(const Tensor& frames) {
  // frames arrive [T', D]; the batched path wants [1, D, T']
  const int64_t t = frames.dim(0), d = frames.dim(1);
  Tensor x({1, d, t});
  for (int64_t i = 0; i < t; ++i)
    for (int64_t j = 0; j < d; ++j) x.at3(0, j, i) = frames.at2(i, j);
  ag::NoGradGuard ng;
  Value out = forward(ag::constant(x));
  return Tensor::from_flat({embedding_dim()}, out->val.flat());
}

// ---- ASP ----

AspPool::AspPool(std::string path, uint64_t seed, int64_t in_dim,
                 const PoolingConfig& cfg)
    : Pooler(std::move(path), seed), in_dim_(in_dim), cfg_(cfg) {
  int64_t score_in = cfg.asp_context ? 3 * in_dim : in_dim;
  score_hidden_ = std::make_unique<nn::Conv1d>(child_path("score_hidden"), seed,
                                               score_in, cfg.asp_bottleneck, 1);
  score_out_ = std::make_unique<nn::Conv1d>(child_path("score_out"), seed,
                                            cfg.asp_bottleneck, in_dim, 1);
  proj_ = std::make_unique<nn::Linear>(child_path("proj"), seed, 2 * in_dim,
                                       cfg.embedding_dim);
  adopt(score_hidden_.get());
  adopt(score_out_.get());
  adopt(proj_.get());
}

std::pair<Value, Value> AspPool::weighted_stats(const Value& frames) const {
  const int64_t n = frames->val.dim(0);
  const int64_t t = frames->val.dim(2);
  Value score_in = frames;
  if (cfg_.asp_context) {
    Value mean = ag::mean_axis(frames, 2, true);        // [N,D,1]
    Value ex2 = ag::mean_axis(ag::square(frames), 2, true);
    Value var = ag::clamp_min(ag::sub(ex2, ag::square(mean)), 1e-16);
    Value std = ag::sqrt_v(var);
    Value ones = ag::constant(Tensor::full({n, in_dim_, t}, 1.0));
    score_in = ag::concat({frames, ag::mul(mean, ones), ag::mul(std, ones)}, 1);
  }
  Value h = ag::tanh_v(score_hidden_->forward(score_in));
  Value scores = score_out_->forward(h);       // [N,D,T]
  Value att = ag::softmax_lastdim(scores);     // over T, per channel
  Value mu = ag::sum_axis(ag::mul(att, frames), 2, false);  // [N,D]
  Value ex2 = ag::sum_axis(ag::mul(att, ag::square(frames)), 2, false);
  Value var = ag::clamp_min(ag::sub(ex2, ag::square(mu)), 1e-16);
  return {mu, ag::sqrt_v(var)};
}

Value AspPool::forward(const Value& frames) {
  auto [mu, sd] = weighted_stats(frames);
  return proj_->forward(ag::concat({mu, sd}, 1));
}

// ---- GAP ----

GatTopK::GatTopK(std::string path, uint64_t seed, int64_t feat_dim,
                 double ratio)
    : nn::Module(std::move(path), seed), feat_dim_(feat_dim), ratio_(ratio) {
  w_ = std::make_unique<nn::Linear>(child_path("w"), seed, feat_dim, feat_dim);
  adopt(w_.get());
  a_src_ = make_param("a_src", {feat_dim, 1}, Init::kUniformFanIn, feat_dim);
  a_dst_ = make_param("a_dst", {feat_dim, 1}, Init::kUniformFanIn, feat_dim);
  score_ = make_param("score", {feat_dim, 1}, Init::kUniformFanIn, feat_dim);
}

Value GatTopK::forward(const Value& nodes) const {
  const int64_t n = nodes->val.dim(0);
  Value wh = w_->forward(nodes);  // [n,F]
  // full-graph attention from decomposed source/destination terms
  Value u = ag::matmul(wh, a_src_);                  // [n,1]
  Value v = ag::transpose2d(ag::matmul(wh, a_dst_));  // [1,n]
  Value logits = ag::leaky_relu(ag::add(u, v), 0.2);  // [n,n]
  Value att = ag::softmax_lastdim(logits);
  Value h = ag::matmul(att, wh);  // [n,F]

  // scores from a learned projection, normalized to unit direction
  Value inv_norm = ag::div(
      ag::constant(Tensor::scalar(1.0)),
      ag::sqrt_v(ag::clamp_min(ag::sum_all(ag::square(score_)), 1e-24)));
  Value s = ag::mul(ag::matmul(h, score_), ag::reshape(inv_norm, {1, 1}));

  const int64_t k = retained_nodes(ratio_, n);
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const Tensor& sv = s->val;
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return sv[a] > sv[b];
  });
  order.resize(static_cast<size_t>(k));
  std::sort(order.begin(), order.end());  // keep original node order

  Value kept = ag::index_select0(h, order);            // [k,F]
  Value kept_s = ag::index_select0(s, order);          // [k,1]
  Value gate = ag::add_scalar(ag::tanh_v(kept_s), 1.0);
  return ag::mul(kept, gate);
}

GapPool::GapPool(std::string path, uint64_t seed, int64_t in_dim,
                 const PoolingConfig& cfg)
    : Pooler(std::move(path), seed), in_dim_(in_dim), cfg_(cfg) {
  check_config(in_dim % cfg.gap_spectral_groups == 0,
               "encoder dim " + std::to_string(in_dim) +
                   " not divisible by gap_spectral_groups " +
                   std::to_string(cfg.gap_spectral_groups));
  const int64_t f = cfg.gap_attention_dim;
  spec_proj_ = std::make_unique<nn::Linear>(
      child_path("spec_proj"), seed, in_dim / cfg.gap_spectral_groups, f);
  temp_proj_ = std::make_unique<nn::Linear>(child_path("temp_proj"), seed,
                                            in_dim, f);
  out_proj_ = std::make_unique<nn::Linear>(child_path("out_proj"), seed, f,
                                           cfg.embedding_dim);
  gat_spec_ = std::make_unique<GatTopK>(child_path("gat_spec"), seed, f,
                                        cfg.ratio_spectral);
  gat_temp_ = std::make_unique<GatTopK>(child_path("gat_temp"), seed, f,
                                        cfg.ratio_temporal);
  gat_st_ = std::make_unique<GatTopK>(child_path("gat_st"), seed, f,
                                      cfg.ratio_spectro_temporal);
  for (nn::Module* m : {static_cast<nn::Module*>(spec_proj_.get()),
                        static_cast<nn::Module*>(temp_proj_.get()),
                        static_cast<nn::Module*>(out_proj_.get()),
                        static_cast<nn::Module*>(gat_spec_.get()),
                        static_cast<nn::Module*>(gat_temp_.get()),
                        static_cast<nn::Module*>(gat_st_.get())})
    adopt(m);
}

Value GapPool::spectral_nodes(const Value& frames_dt) const {
  // [D,T] -> time average -> S sub-band nodes
  const int64_t s = cfg_.gap_spectral_groups;
  Value avg = ag::mean_axis(frames_dt, 1, false);  // [D]
  Value grouped = ag::reshape(avg, {s, in_dim_ / s});
  return spec_proj_->forward(grouped);  // [S,F]
}

Value GapPool::temporal_nodes(const Value& frames_dt) const {
  // [D,T] -> contiguous chunk averages -> nt frame-segment nodes
  const int64_t t = frames_dt->val.dim(1);
  const int64_t chunk = cfg_.gap_temporal_chunk;
  const int64_t nt = (t + chunk - 1) / chunk;
  std::vector<Value> cols;
  cols.reserve(static_cast<size_t>(nt));
  for (int64_t i = 0; i < nt; ++i) {
    int64_t lo = i * chunk;
    int64_t len = std::min(chunk, t - lo);
    Value seg = ag::slice(frames_dt, 1, lo, len);
    cols.push_back(ag::mean_axis(seg, 1, true));  // [D,1]
  }
  Value stacked = nt == 1 ? cols[0] : ag::concat(cols, 1);  // [D,nt]
  return temp_proj_->forward(ag::transpose2d(stacked));     // [nt,F]
}

Value GapPool::forward_single(const Value& frames_dt) const {
  const int64_t f = cfg_.gap_attention_dim;
  Value spec = gat_spec_->forward(spectral_nodes(frames_dt));  // [ks,F]
  Value temp = gat_temp_->forward(temporal_nodes(frames_dt));  // [kt,F]
  const int64_t ks = spec->val.dim(0), kt = temp->val.dim(0);
  // spectro-temporal grid: element-wise products of branch node pairs
  Value grid = ag::mul(ag::reshape(spec, {ks, 1, f}),
                       ag::reshape(temp, {1, kt, f}));
  Value fused = ag::reshape(grid, {ks * kt, f});
  Value pooled = gat_st_->forward(fused);
  Value readout = ag::mean_axis(pooled, 0, false);  // [F]
  return out_proj_->forward(readout);               // [d]
}

Value GapPool::forward(const Value& frames) {
  const int64_t n = frames->val.dim(0);
  const int64_t d = frames->val.dim(1);
  const int64_t t = frames->val.dim(2);
  std::vector<Value> outs;
  outs.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    Value xe = ag::reshape(ag::slice(frames, 0, i, 1), {d, t});
    outs.push_back(ag::reshape(forward_single(xe), {1, cfg_.embedding_dim}));
  }
  return outs.size() == 1 ? outs[0] : ag::concat(outs, 0);
}

std::unique_ptr<Pooler> build_pooler(const PoolingConfig& cfg, int64_t in_dim,
                                     uint64_t seed, const std::string& path) {
  cfg.validate();
  if (cfg.kind == "asp")
    return std::make_unique<AspPool>(path, seed, in_dim, cfg);
  return std::make_unique<GapPool>(path, seed, in_dim, cfg);
}

}  // namespace kws
