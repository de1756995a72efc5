// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#include "kws/encoders.hpp"

#include "kws/frontend.hpp"

#include <cmath>

namespace kws {

using ag::Value;

std::string family_name(EncoderFamily f) {
  switch (f) {
    case EncoderFamily::kLiconet:
      return "liconet";
    case EncoderFamily::kConformer:
      return "conformer";
    case EncoderFamily::kEcapaTdnn:
      return "ecapa_tdnn";
  }
  return "?";
}

EncoderFamily family_from_name(const std::string& s) {
  if (s == "liconet") return EncoderFamily::kLiconet;
  if (s == "conformer") return EncoderFamily::kConformer;
  if (s == "ecapa_tdnn") return EncoderFamily::kEcapaTdnn;
  throw ConfigError("unknown encoder family '" + s +
                    "' (expected liconet|conformer|ecapa_tdnn)");
}

int64_t scale_width(int64_t w, double scale) {
  if (scale == 1.0) return w;
  int64_t scaled = static_cast<int64_t>(std::llround(
      static_cast<double>(w) * scale / 8.0)) * 8;
  return std::max<int64_t>(8, scaled);
}

void EncoderConfig::validate() const {
  check_config(scale > 0.0, "encoder.scale must be > 0");
  auto positive = [](int v, const std::string& f) {
    check_config(v >= 1, "encoder." + f + " must be >= 1");
  };
  positive(liconet.blocks, "liconet.blocks");
  positive(liconet.width, "liconet.width");
  positive(liconet.expansion, "liconet.expansion");
  positive(liconet.kernel, "liconet.kernel");
  positive(liconet.stem_stride, "liconet.stem_stride");
  positive(liconet.block1_stride, "liconet.block1_stride");
  positive(conformer.dim, "conformer.dim");
  positive(conformer.blocks, "conformer.blocks");
  positive(conformer.heads, "conformer.heads");
  positive(conformer.ffn_hidden, "conformer.ffn_hidden");
  positive(conformer.conv_kernel, "conformer.conv_kernel");
  positive(ecapa.channels, "ecapa.channels");
  positive(ecapa.se_bottleneck, "ecapa.se_bottleneck");
  positive(ecapa.res2_scale, "ecapa.res2_scale");
  positive(ecapa.agg_channels, "ecapa.agg_channels");
  check_config(!ecapa.dilations.empty(), "encoder.ecapa.dilations is empty");
  if (family == EncoderFamily::kConformer) {
    ConformerSpec s = scaled_conformer();
    check_config(s.dim % s.heads == 0,
                 "conformer.dim (" + std::to_string(s.dim) +
                     ") not divisible by num_heads (" +
                     std::to_string(s.heads) + ")");
  }
  if (family == EncoderFamily::kEcapaTdnn) {
    EcapaSpec s = scaled_ecapa();
    check_config(s.channels % s.res2_scale == 0,
                 "ecapa.channels (" + std::to_string(s.channels) +
                     ") not divisible by res2_scale (" +
                     std::to_string(s.res2_scale) + ")");
  }
}

nlohmann::json EncoderConfig::to_json() const {
  return nlohmann::json{
      {"family", family_name(family)},
      {"scale", scale},
      {"liconet",
       {{"stem_channels", liconet.stem_channels},
        {"stem_kernel", liconet.stem_kernel},
        {"stem_stride", liconet.stem_stride},
        {"blocks", liconet.blocks},
        {"width", liconet.width},
        {"expansion", liconet.expansion},
        {"kernel", liconet.kernel},
        {"block1_stride", liconet.block1_stride}}},
      {"conformer",
       {{"dim", conformer.dim},
        {"blocks", conformer.blocks},
        {"heads", conformer.heads},
        {"ffn_hidden", conformer.ffn_hidden},
        {"conv_kernel", conformer.conv_kernel},
        {"rel_pos_clip", conformer.rel_pos_clip}}},
      {"ecapa",
       {{"channels", ecapa.channels},
        {"se_bottleneck", ecapa.se_bottleneck},
        {"res2_scale", ecapa.res2_scale},
        {"stem_kernel", ecapa.stem_kernel},
        {"stem_stride", ecapa.stem_stride},
        {"dilations", ecapa.dilations},
        {"agg_channels", ecapa.agg_channels}}}};
}

EncoderConfig EncoderConfig::from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.family = family_from_name(j.at("family").get<std::string>());
  c.scale = j.value("scale", 1.0);
  if (j.contains("liconet")) {
    const auto& l = j.at("liconet");
    c.liconet.stem_channels = l.value("stem_channels", c.liconet.stem_channels);
    c.liconet.stem_kernel = l.value("stem_kernel", c.liconet.stem_kernel);
    c.liconet.stem_stride = l.value("stem_stride", c.liconet.stem_stride);
    c.liconet.blocks = l.value("blocks", c.liconet.blocks);
    c.liconet.width = l.value("width", c.liconet.width);
    c.liconet.expansion = l.value("expansion", c.liconet.expansion);
    c.liconet.kernel = l.value("kernel", c.liconet.kernel);
    c.liconet.block1_stride = l.value("block1_stride", c.liconet.block1_stride);
  }
  if (j.contains("conformer")) {
    const auto& cf = j.at("conformer");
    c.conformer.dim = cf.value("dim", c.conformer.dim);
    c.conformer.blocks = cf.value("blocks", c.conformer.blocks);
    c.conformer.heads = cf.value("heads", c.conformer.heads);
    c.conformer.ffn_hidden = cf.value("ffn_hidden", c.conformer.ffn_hidden);
    c.conformer.conv_kernel = cf.value("conv_kernel", c.conformer.conv_kernel);
    c.conformer.rel_pos_clip = cf.value("rel_pos_clip", c.conformer.rel_pos_clip);
  }
  if (j.contains("ecapa")) {
    const auto& e = j.at("ecapa");
    c.ecapa.channels = e.value("channels", c.ecapa.channels);
    c.ecapa.se_bottleneck = e.value("se_bottleneck", c.ecapa.se_bottleneck);
    c.ecapa.res2_scale = e.value("res2_scale", c.ecapa.res2_scale);
    c.ecapa.stem_kernel = e.value("stem_kernel", c.ecapa.stem_kernel);
    c.ecapa.stem_stride = e.value("stem_stride", c.ecapa.stem_stride);
    if (e.contains("dilations"))
      c.ecapa.dilations = e.at("dilations").get<std::vector<int>>();
    c.ecapa.agg_channels = e.value("agg_channels", c.ecapa.agg_channels);
  }
  return c;
}

LiconetSpec EncoderConfig::scaled_liconet() const {
  LiconetSpec s = liconet;
  s.stem_channels = static_cast<int>(scale_width(s.stem_channels, scale));
  s.width = static_cast<int>(scale_width(s.width, scale));
  return s;
}

ConformerSpec EncoderConfig::scaled_conformer() const {
  ConformerSpec s = conformer;
  s.dim = static_cast<int>(scale_width(s.dim, scale));
  s.ffn_hidden = static_cast<int>(scale_width(s.ffn_hidden, scale));
  return s;
}

EcapaSpec EncoderConfig::scaled_ecapa() const {
  EcapaSpec s = ecapa;
  s.channels = static_cast<int>(scale_width(s.channels, scale));
  s.se_bottleneck = static_cast<int>(scale_width(s.se_bottleneck, scale));
  s.agg_channels = static_cast<int>(scale_width(s.agg_channels, scale));
  return s;
}

// ---- LiCoNet ----

LicoBlock::LicoBlock(std::string path, uint64_t seed, int64_t in_ch,
                     int64_t out_ch, int expansion, int kernel, int stride,
                     bool residual)
    : nn::Module(std::move(path), seed), residual_(residual) {
  if (residual_) {
    check_config(in_ch == out_ch && stride == 1,
                 "residual path channel/stride mismatch in " + this->path() +
                     ": " + std::to_string(in_ch) + " -> " +
                     std::to_string(out_ch) + " stride " +
                     std::to_string(stride));
  }
  const int64_t hidden = out_ch * expansion;
  tconv_ = std::make_unique<nn::Conv1d>(child_path("tconv"), seed, in_ch,
                                        out_ch, kernel, stride, kernel / 2);
  expand_ = std::make_unique<nn::Conv1d>(child_path("expand"), seed, out_ch,
                                         hidden, 1);
  project_ = std::make_unique<nn::Conv1d>(child_path("project"), seed, hidden,
                                          out_ch, 1);
  bn1_ = std::make_unique<nn::BatchNorm1d>(child_path("bn1"), seed, out_ch);
  bn2_ = std::make_unique<nn::BatchNorm1d>(child_path("bn2"), seed, hidden);
  bn3_ = std::make_unique<nn::BatchNorm1d>(child_path("bn3"), seed, out_ch);
  for (nn::Module* m : {static_cast<nn::Module*>(tconv_.get()),
                        static_cast<nn::Module*>(expand_.get()),
                        static_cast<nn::Module*>(project_.get()),
                        static_cast<nn::Module*>(bn1_.get()),
                        static_cast<nn::Module*>(bn2_.get()),
                        static_cast<nn::Module*>(bn3_.get())})
    adopt(m);
}

Value LicoBlock::forward(const Value& x) const {
  Value h = ag::silu(bn1_->forward(tconv_->forward(x)));
  h = ag::silu(bn2_->forward(expand_->forward(h)));
  h = bn3_->forward(project_->forward(h));
  if (residual_) h = ag::add(h, x);
  return h;
}

LiCoNet::LiCoNet(std::string path, uint64_t seed, const LiconetSpec& spec)
    : Encoder(std::move(path), seed), spec_(spec) {
  stem_ = std::make_unique<nn::Conv1d>(child_path("stem"), seed, kNumMels,
                                       spec.stem_channels, spec.stem_kernel,
                                       spec.stem_stride, spec.stem_kernel / 2);
  stem_bn_ = std::make_unique<nn::BatchNorm1d>(child_path("stem_bn"), seed,
                                               spec.stem_channels);
  adopt(stem_.get());
  adopt(stem_bn_.get());
  int64_t in_ch = spec.stem_channels;
  for (int b = 0; b < spec.blocks; ++b) {
    int stride = b == 0 ? spec.block1_stride : 1;
    bool residual = stride == 1 && in_ch == spec.width;
    blocks_.push_back(std::make_unique<LicoBlock>(
        child_path("block" + std::to_string(b)), seed, in_ch, spec.width,
        spec.expansion, spec.kernel, stride, residual));
    adopt(blocks_.back().get());
    in_ch = spec.width;
  }
}

Value LiCoNet::forward(const Value& x) {
  Value h = ag::silu(stem_bn_->forward(stem_->forward(x)));
  for (const auto& b : blocks_) h = b->forward(h);
  return h;
}

int64_t LiCoNet::out_frames(int64_t t_in) const {
  int64_t t = stem_->out_frames(t_in);
  for (const auto& b : blocks_) t = b->out_frames(t);
  return t;
}

// ---- Conformer ----

MultiHeadSelfAttention::MultiHeadSelfAttention(std::string path, uint64_t seed,
                                               int64_t dim, int heads,
                                               int rel_pos_clip)
    : nn::Module(std::move(path), seed),
      dim_(dim),
      heads_(heads),
      clip_(rel_pos_clip) {
  check_config(dim % heads == 0, "attention dim " + std::to_string(dim) +
                                     " not divisible by num_heads " +
                                     std::to_string(heads));
  wq_ = std::make_unique<nn::Linear>(child_path("wq"), seed, dim, dim);
  wk_ = std::make_unique<nn::Linear>(child_path("wk"), seed, dim, dim);
  wv_ = std::make_unique<nn::Linear>(child_path("wv"), seed, dim, dim);
  wo_ = std::make_unique<nn::Linear>(child_path("wo"), seed, dim, dim);
  for (nn::Module* m : {wq_.get(), wk_.get(), wv_.get(), wo_.get()})
    adopt(m);
  rel_bias_ = make_param("rel_bias", {heads, 2 * rel_pos_clip + 1},
                         Init::kZeros);
}

Value MultiHeadSelfAttention::forward(const Value& x) const {
  const int64_t t = x->val.dim(0);
  const int64_t dh = dim_ / heads_;
  Value q = wq_->forward(x);
  Value k = wk_->forward(x);
  Value v = wv_->forward(x);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Value> heads_out;
  for (int h = 0; h < heads_; ++h) {
    Value qh = ag::slice(q, 1, h * dh, dh);
    Value kh = ag::slice(k, 1, h * dh, dh);
    Value vh = ag::slice(v, 1, h * dh, dh);
    Value logits = ag::scale(ag::matmul(qh, ag::transpose2d(kh)), inv_sqrt);
    Value bias_row = ag::reshape(ag::slice(rel_bias_, 0, h, 1),
                                 {2 * static_cast<int64_t>(clip_) + 1});
    logits = ag::add(logits, ag::relative_bias_matrix(bias_row, t, clip_));
    Value att = ag::softmax_lastdim(logits);
    heads_out.push_back(ag::matmul(att, vh));
  }
  Value merged = heads_out.size() == 1 ? heads_out[0]
                                       : ag::concat(heads_out, 1);
  return wo_->forward(merged);
}

ConformerBlock::ConformerBlock(std::string path, uint64_t seed,
                               const ConformerSpec& spec)
    : nn::Module(std::move(path), seed), spec_(spec) {
  const int64_t d = spec.dim;
  ln_ff1_ = std::make_unique<nn::LayerNorm>(child_path("ln_ff1"), seed, d);
  ln_mhsa_ = std::make_unique<nn::LayerNorm>(child_path("ln_mhsa"), seed, d);
  ln_conv_ = std::make_unique<nn::LayerNorm>(child_path("ln_conv"), seed, d);
  ln_ff2_ = std::make_unique<nn::LayerNorm>(child_path("ln_ff2"), seed, d);
  ln_out_ = std::make_unique<nn::LayerNorm>(child_path("ln_out"), seed, d);
  ff1_up_ = std::make_unique<nn::Linear>(child_path("ff1_up"), seed, d,
                                         spec.ffn_hidden);
  ff1_down_ = std::make_unique<nn::Linear>(child_path("ff1_down"), seed,
                                           spec.ffn_hidden, d);
  ff2_up_ = std::make_unique<nn::Linear>(child_path("ff2_up"), seed, d,
                                         spec.ffn_hidden);
  ff2_down_ = std::make_unique<nn::Linear>(child_path("ff2_down"), seed,
                                           spec.ffn_hidden, d);
  mhsa_ = std::make_unique<MultiHeadSelfAttention>(
      child_path("mhsa"), seed, d, spec.heads, spec.rel_pos_clip);
  conv_pw1_ = std::make_unique<nn::Conv1d>(child_path("conv_pw1"), seed, d,
                                           2 * d, 1);
  conv_dw_ = std::make_unique<nn::Conv1d>(
      child_path("conv_dw"), seed, d, d, spec.conv_kernel, 1,
      spec.conv_kernel / 2, 1, static_cast<int>(d));
  conv_pw2_ = std::make_unique<nn::Conv1d>(child_path("conv_pw2"), seed, d, d,
                                           1);
  conv_bn_ = std::make_unique<nn::BatchNorm1d>(child_path("conv_bn"), seed, d);
  for (nn::Module* m :
       {static_cast<nn::Module*>(ln_ff1_.get()), static_cast<nn::Module*>(ln_mhsa_.get()),
        static_cast<nn::Module*>(ln_conv_.get()), static_cast<nn::Module*>(ln_ff2_.get()),
        static_cast<nn::Module*>(ln_out_.get()), static_cast<nn::Module*>(ff1_up_.get()),
        static_cast<nn::Module*>(ff1_down_.get()), static_cast<nn::Module*>(ff2_up_.get()),
        static_cast<nn::Module*>(ff2_down_.get()), static_cast<nn::Module*>(mhsa_.get()),
        static_cast<nn::Module*>(conv_pw1_.get()), static_cast<nn::Module*>(conv_dw_.get()),
        static_cast<nn::Module*>(conv_pw2_.get()), static_cast<nn::Module*>(conv_bn_.get())})
    adopt(m);
}

Value ConformerBlock::feed_forward(const nn::LayerNorm& ln,
                                   const nn::Linear& up, const nn::Linear& down,
                                   const Value& x) const {
  return down.forward(ag::silu(up.forward(ln.forward(x))));
}

Value ConformerBlock::conv_module(const Value& x) const {
  const int64_t t = x->val.dim(0);
  const int64_t d = spec_.dim;
  Value h = ln_conv_->forward(x);
  // [T,D] -> [1,D,T] for the convolution stack
  h = ag::transpose12(ag::reshape(h, {1, t, d}));
  h = conv_pw1_->forward(h);
  Value a = ag::slice(h, 1, 0, d);
  Value b = ag::slice(h, 1, d, d);
  h = ag::mul(a, ag::sigmoid(b));  // GLU
  h = conv_dw_->forward(h);
  h = ag::silu(conv_bn_->forward(h));
  h = conv_pw2_->forward(h);
  return ag::reshape(ag::transpose12(h), {t, d});
}

Value ConformerBlock::forward(const Value& x) const {
  // FF -> MHSA -> Conv -> FF with half-step feed-forward residuals
  Value h = ag::add(x, ag::scale(feed_forward(*ln_ff1_, *ff1_up_, *ff1_down_, x), 0.5));
  h = ag::add(h, mhsa_->forward(ln_mhsa_->forward(h)));
  h = ag::add(h, conv_module(h));
  h = ag::add(h, ag::scale(feed_forward(*ln_ff2_, *ff2_up_, *ff2_down_, h), 0.5));
  return ln_out_->forward(h);
}

Conformer::Conformer(std::string path, uint64_t seed, const ConformerSpec& spec)
    : Encoder(std::move(path), seed), spec_(spec) {
  check_config(spec.dim % spec.heads == 0,
               "attention dim " + std::to_string(spec.dim) +
                   " not divisible by num_heads " + std::to_string(spec.heads));
  input_proj_ = std::make_unique<nn::Linear>(child_path("input_proj"), seed,
                                             kNumMels, spec.dim);
  adopt(input_proj_.get());
  for (int b = 0; b < spec.blocks; ++b) {
    blocks_.push_back(std::make_unique<ConformerBlock>(
        child_path("block" + std::to_string(b)), seed, spec));
    adopt(blocks_.back().get());
  }
}

Value Conformer::forward(const Value& x) {
  const int64_t n = x->val.dim(0);
  const int64_t t = x->val.dim(2);
  std::vector<Value> outs;
  for (int64_t i = 0; i < n; ++i) {
    Value xe = ag::reshape(ag::slice(x, 0, i, 1), {kNumMels, t});
    Value h = input_proj_->forward(ag::transpose2d(xe));  // [T, D]
    for (const auto& b : blocks_) h = b->forward(h);
    outs.push_back(ag::reshape(ag::transpose2d(h), {1, spec_.dim, t}));
  }
  return outs.size() == 1 ? outs[0] : ag::concat(outs, 0);
}

// ---- ECAPA-TDNN ----

SeRes2Block::SeRes2Block(std::string path, uint64_t seed, int64_t channels,
                         int res2_scale, int dilation, int64_t se_bottleneck,
                         bool use_se)
    : nn::Module(std::move(path), seed),
      channels_(channels),
      scale_(res2_scale),
      use_se_(use_se) {
  check_config(channels % res2_scale == 0,
               "channels (" + std::to_string(channels) +
                   ") not divisible by res2_scale (" +
                   std::to_string(res2_scale) + ") in " + this->path());
  conv_in_ = std::make_unique<nn::Conv1d>(child_path("conv_in"), seed,
                                          channels, channels, 1);
  conv_out_ = std::make_unique<nn::Conv1d>(child_path("conv_out"), seed,
                                           channels, channels, 1);
  const int64_t w = channels / res2_scale;
  for (int i = 0; i < res2_scale - 1; ++i) {
    res2_convs_.push_back(std::make_unique<nn::Conv1d>(
        child_path("res2_" + std::to_string(i)), seed, w, w, 3, 1, dilation,
        dilation));
    adopt(res2_convs_.back().get());
  }
  bn_in_ = std::make_unique<nn::BatchNorm1d>(child_path("bn_in"), seed, channels);
  bn_mid_ = std::make_unique<nn::BatchNorm1d>(child_path("bn_mid"), seed, channels);
  bn_out_ = std::make_unique<nn::BatchNorm1d>(child_path("bn_out"), seed, channels);
  se_down_ = std::make_unique<nn::Linear>(child_path("se_down"), seed, channels,
                                          se_bottleneck);
  se_up_ = std::make_unique<nn::Linear>(child_path("se_up"), seed, se_bottleneck,
                                        channels);
  for (nn::Module* m : {static_cast<nn::Module*>(conv_in_.get()),
                        static_cast<nn::Module*>(conv_out_.get()),
                        static_cast<nn::Module*>(bn_in_.get()),
                        static_cast<nn::Module*>(bn_mid_.get()),
                        static_cast<nn::Module*>(bn_out_.get()),
                        static_cast<nn::Module*>(se_down_.get()),
                        static_cast<nn::Module*>(se_up_.get())})
    adopt(m);
}

Value SeRes2Block::forward(const Value& x) const {
  const int64_t w = channels_ / scale_;
  Value h = bn_in_->forward(ag::relu(conv_in_->forward(x)));
  // hierarchical multi-scale convolutions; the first split passes through
  std::vector<Value> ys;
  Value prev;
  for (int i = 0; i < scale_; ++i) {
    Value xi = ag::slice(h, 1, i * w, w);
    if (i == 0) {
      prev = xi;
    } else {
      Value in = i == 1 ? xi : ag::add(xi, prev);
      prev = res2_convs_[static_cast<size_t>(i - 1)]->forward(in);
    }
    ys.push_back(prev);
  }
  h = bn_mid_->forward(ag::relu(ag::concat(ys, 1)));
  h = bn_out_->forward(ag::relu(conv_out_->forward(h)));
  if (use_se_) {
    Value s = ag::mean_axis(h, 2, false);  // [N, C]
    Value gate = ag::sigmoid(se_up_->forward(ag::relu(se_down_->forward(s))));
    const int64_t n = h->val.dim(0);
    gate = ag::reshape(gate, {n, channels_, 1});
    h = ag::mul(h, gate);
  }
  return ag::add(h, x);
}

EcapaTdnn::EcapaTdnn(std::string path, uint64_t seed, const EcapaSpec& spec)
    : Encoder(std::move(path), seed), spec_(spec) {
  check_config(spec.channels % spec.res2_scale == 0,
               "channels (" + std::to_string(spec.channels) +
                   ") not divisible by res2_scale (" +
                   std::to_string(spec.res2_scale) + ")");
  stem_ = std::make_unique<nn::Conv1d>(child_path("stem"), seed, kNumMels,
                                       spec.channels, spec.stem_kernel,
                                       spec.stem_stride, spec.stem_kernel / 2);
  stem_bn_ = std::make_unique<nn::BatchNorm1d>(child_path("stem_bn"), seed,
                                               spec.channels);
  adopt(stem_.get());
  adopt(stem_bn_.get());
  for (size_t i = 0; i < spec.dilations.size(); ++i) {
    blocks_.push_back(std::make_unique<SeRes2Block>(
        child_path("block" + std::to_string(i)), seed, spec.channels,
        spec.res2_scale, spec.dilations[i], spec.se_bottleneck));
    adopt(blocks_.back().get());
  }
  agg_ = std::make_unique<nn::Conv1d>(
      child_path("agg"), seed,
      spec.channels * static_cast<int64_t>(spec.dilations.size()),
      spec.agg_channels, 1);
  adopt(agg_.get());
}

Value EcapaTdnn::forward(const Value& x) {
  Value h = stem_bn_->forward(ag::relu(stem_->forward(x)));
  std::vector<Value> outs;
  Value cur = h;
  for (const auto& b : blocks_) {
    cur = b->forward(cur);
    outs.push_back(cur);
  }
  Value cat = ag::concat(outs, 1);
  return ag::relu(agg_->forward(cat));
}

int64_t EcapaTdnn::out_frames(int64_t t_in) const {
  return stem_->out_frames(t_in);
}

std::unique_ptr<Encoder> build_encoder(const EncoderConfig& cfg, uint64_t seed,
                                       const std::string& path) {
  cfg.validate();
  switch (cfg.family) {
    case EncoderFamily::kLiconet:
      return std::make_unique<LiCoNet>(path, seed, cfg.scaled_liconet());
    case EncoderFamily::kConformer:
      return std::make_unique<Conformer>(path, seed, cfg.scaled_conformer());
    case EncoderFamily::kEcapaTdnn:
      return std::make_unique<EcapaTdnn>(path, seed, cfg.scaled_ecapa());
  }
  throw ConfigError("unreachable encoder family");
}

}  // namespace kws
