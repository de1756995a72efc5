// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#include "kws/profiling.hpp"

#include <cmath>

#include "kws/frontend.hpp"
#include "kws/pooling.hpp"

namespace kws {

int64_t count_params(const nn::Module& module) { return module.param_count(); }

double conv1d_flops(int64_t c_in, int64_t c_out, int64_t kernel,
                    int64_t frames_out, int64_t groups) {
  return 2.0 * static_cast<double>(c_in / groups) * static_cast<double>(c_out) *
         static_cast<double>(kernel) * static_cast<double>(frames_out);
}

namespace {

int64_t conv_out_frames(int64_t t_in, int64_t kernel, int64_t stride,
                        int64_t pad, int64_t dilation = 1) {
  int64_t span = (kernel - 1) * dilation + 1;
  return (t_in + 2 * pad - span) / stride + 1;
}

void add_conv(CostReport& r, const std::string& name, int64_t c_in,
              int64_t c_out, int64_t kernel, int64_t t_out, int64_t groups = 1,
              bool bias = true) {
  LayerCost l;
  l.name = name;
  l.params = (c_in / groups) * c_out * kernel + (bias ? c_out : 0);
  l.flops = conv1d_flops(c_in, c_out, kernel, t_out, groups);
  l.frames_out = t_out;
  r.layers.push_back(l);
}

void add_linear_per_frame(CostReport& r, const std::string& name, int64_t in,
                          int64_t out, int64_t t) {
  add_conv(r, name, in, out, 1, t);
}

// one-shot linear (per utterance)
void add_linear_once(CostReport& r, const std::string& name, int64_t in,
                     int64_t out) {
  add_conv(r, name, in, out, 1, 1);
}

void add_params_only(CostReport& r, const std::string& name, int64_t params,
                     int64_t t_out) {
  LayerCost l;
  l.name = name;
  l.params = params;
  l.flops = 0.0;
  l.frames_out = t_out;
  r.layers.push_back(l);
}

void profile_liconet(CostReport& r, const LiconetSpec& s, int64_t t_in) {
  int64_t t = conv_out_frames(t_in, s.stem_kernel, s.stem_stride,
                              s.stem_kernel / 2);
  add_conv(r, "stem", kNumMels, s.stem_channels, s.stem_kernel, t);
  add_params_only(r, "stem_bn", 2 * s.stem_channels, t);
  int64_t c_in = s.stem_channels;
  const int64_t c = s.width;
  const int64_t hidden = static_cast<int64_t>(s.expansion) * c;
  for (int b = 0; b < s.blocks; ++b) {
    int64_t stride = b == 0 ? s.block1_stride : 1;
    t = conv_out_frames(t, s.kernel, stride, s.kernel / 2);
    std::string prefix = "block" + std::to_string(b) + ".";
    add_conv(r, prefix + "tconv", c_in, c, s.kernel, t);
    add_params_only(r, prefix + "bn1", 2 * c, t);
    add_conv(r, prefix + "expand", c, hidden, 1, t);
    add_params_only(r, prefix + "bn2", 2 * hidden, t);
    add_conv(r, prefix + "project", hidden, c, 1, t);
    add_params_only(r, prefix + "bn3", 2 * c, t);
    c_in = c;
  }
}

void profile_conformer(CostReport& r, const ConformerSpec& s, int64_t t) {
  const int64_t d = s.dim;
  add_linear_per_frame(r, "input_proj", kNumMels, d, t);
  const double t_d = static_cast<double>(t);
  for (int b = 0; b < s.blocks; ++b) {
    std::string p = "block" + std::to_string(b) + ".";
    add_params_only(r, p + "layer_norms", 5 * 2 * d, t);
    add_linear_per_frame(r, p + "ff1_up", d, s.ffn_hidden, t);
    add_linear_per_frame(r, p + "ff1_down", s.ffn_hidden, d, t);
    add_linear_per_frame(r, p + "mhsa_qkvo", d, 4 * d, t);
    // attention terms: QK, softmax, AV
    LayerCost att;
    att.name = p + "mhsa_attention";
    att.params = s.heads * (2 * s.rel_pos_clip + 1);
    att.flops = 2.0 * t_d * t_d * d          // QK
                + 5.0 * s.heads * t_d * t_d  // softmax
                + 2.0 * t_d * t_d * d;       // AV
    att.frames_out = t;
    r.layers.push_back(att);
    add_linear_per_frame(r, p + "conv_pw1", d, 2 * d, t);
    add_conv(r, p + "conv_dw", d, d, s.conv_kernel, t, d);
    add_params_only(r, p + "conv_bn", 2 * d, t);
    add_linear_per_frame(r, p + "conv_pw2", d, d, t);
    add_linear_per_frame(r, p + "ff2_up", d, s.ffn_hidden, t);
    add_linear_per_frame(r, p + "ff2_down", s.ffn_hidden, d, t);
  }
}

void profile_ecapa(CostReport& r, const EcapaSpec& s, int64_t t_in) {
  int64_t t = conv_out_frames(t_in, s.stem_kernel, s.stem_stride,
                              s.stem_kernel / 2);
  const int64_t c = s.channels;
  add_conv(r, "stem", kNumMels, c, s.stem_kernel, t);
  add_params_only(r, "stem_bn", 2 * c, t);
  const int64_t w = c / s.res2_scale;
  for (size_t b = 0; b < s.dilations.size(); ++b) {
    std::string p = "block" + std::to_string(b) + ".";
    add_conv(r, p + "conv_in", c, c, 1, t);
    add_params_only(r, p + "bn_in", 2 * c, t);
    for (int i = 0; i < s.res2_scale - 1; ++i)
      add_conv(r, p + "res2_" + std::to_string(i), w, w, 3, t);
    add_params_only(r, p + "bn_mid", 2 * c, t);
    add_conv(r, p + "conv_out", c, c, 1, t);
    add_params_only(r, p + "bn_out", 2 * c, t);
    // SE gate: global average then two projections, once per utterance
    LayerCost se;
    se.name = p + "se";
    se.params = c * s.se_bottleneck + s.se_bottleneck +
                s.se_bottleneck * c + c;
    se.flops = 2.0 * (c * s.se_bottleneck) * 2.0;
    se.frames_out = t;
    r.layers.push_back(se);
  }
  add_conv(r, "agg", c * static_cast<int64_t>(s.dilations.size()),
           s.agg_channels, 1, t);
}

void profile_asp(CostReport& r, const PoolingConfig& cfg, int64_t in_dim,
                 int64_t t) {
  // scorer: the frame-dependent input costs per frame; with context, the
  // global-statistics part of the first projection is a fixed shift computed
  // once per utterance
  LayerCost hidden;
  hidden.name = "pooler.score_hidden";
  int64_t score_in = cfg.asp_context ? 3 * in_dim : in_dim;
  hidden.params = score_in * cfg.asp_bottleneck + cfg.asp_bottleneck;
  hidden.flops = conv1d_flops(in_dim, cfg.asp_bottleneck, 1, t);
  if (cfg.asp_context)
    hidden.flops += conv1d_flops(2 * in_dim, cfg.asp_bottleneck, 1, 1);
  hidden.frames_out = t;
  r.layers.push_back(hidden);
  add_linear_per_frame(r, "pooler.score_out", cfg.asp_bottleneck, in_dim, t);
  add_linear_once(r, "pooler.proj", 2 * in_dim, cfg.embedding_dim);
}

double gat_flops(int64_t n, int64_t f) {
  double nd = static_cast<double>(n), fd = static_cast<double>(f);
  return 2.0 * nd * fd * fd   // W h
         + 4.0 * nd * fd      // source/destination attention terms
         + 5.0 * nd * nd      // softmax over the full graph
         + 2.0 * nd * nd * fd // attention-weighted aggregation
         + 2.0 * nd * fd;     // top-k scores
}

void profile_gap(CostReport& r, const PoolingConfig& cfg, int64_t in_dim,
                 int64_t t) {
  const int64_t f = cfg.gap_attention_dim;
  const int64_t s_nodes = cfg.gap_spectral_groups;
  const int64_t t_nodes = (t + cfg.gap_temporal_chunk - 1) / cfg.gap_temporal_chunk;
  LayerCost spec;
  spec.name = "pooler.spec_proj";
  spec.params = (in_dim / s_nodes) * f + f;
  spec.flops = 2.0 * static_cast<double>(s_nodes) *
               static_cast<double>(in_dim / s_nodes) * static_cast<double>(f);
  spec.frames_out = t;
  r.layers.push_back(spec);
  LayerCost temp;
  temp.name = "pooler.temp_proj";
  temp.params = in_dim * f + f;
  temp.flops = 2.0 * static_cast<double>(t_nodes) * static_cast<double>(in_dim) *
               static_cast<double>(f);
  temp.frames_out = t;
  r.layers.push_back(temp);

  auto add_gat = [&](const std::string& name, int64_t nodes) {
    LayerCost g;
    g.name = name;
    g.params = (f * f + f) + 3 * f;  // W plus attention and score vectors
    g.flops = gat_flops(nodes, f);
    g.frames_out = t;
    r.layers.push_back(g);
  };
  add_gat("pooler.gat_spec", s_nodes);
  add_gat("pooler.gat_temp", t_nodes);
  const int64_t ks = retained_nodes(cfg.ratio_spectral, s_nodes);
  const int64_t kt = retained_nodes(cfg.ratio_temporal, t_nodes);
  add_gat("pooler.gat_st", ks * kt);
  add_linear_once(r, "pooler.out_proj", f, cfg.embedding_dim);
}

}  // namespace

CostReport profile_model(const ModelConfig& cfg, int64_t input_frames) {
  cfg.validate();
  CostReport r;
  int64_t out_dim = 0, out_t = 0;
  switch (cfg.encoder.family) {
    case EncoderFamily::kLiconet: {
      LiconetSpec s = cfg.encoder.scaled_liconet();
      profile_liconet(r, s, input_frames);
      out_dim = s.width;
      out_t = r.layers.back().frames_out;
      break;
    }
    case EncoderFamily::kConformer: {
      ConformerSpec s = cfg.encoder.scaled_conformer();
      profile_conformer(r, s, input_frames);
      out_dim = s.dim;
      out_t = input_frames;
      break;
    }
    case EncoderFamily::kEcapaTdnn: {
      EcapaSpec s = cfg.encoder.scaled_ecapa();
      profile_ecapa(r, s, input_frames);
      out_dim = s.agg_channels;
      out_t = r.layers.back().frames_out;
      break;
    }
  }
  if (cfg.pooling.kind == "asp")
    profile_asp(r, cfg.pooling, out_dim, out_t);
  else
    profile_gap(r, cfg.pooling, out_dim, out_t);
  return r;
}

}  // namespace kws
