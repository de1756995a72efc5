// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0
//
// Frame encoders: LiCoNet, Conformer and ECAPA-TDNN. Each maps a batch of
// log-Mel features [N, 40, T] to a frame embedding sequence [N, D, T'].

#ifndef KWS_ENCODERS_HPP_
#define KWS_ENCODERS_HPP_

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "kws/nn.hpp"

namespace kws {

enum class EncoderFamily { kLiconet, kConformer, kEcapaTdnn };

std::string family_name(EncoderFamily f);
EncoderFamily family_from_name(const std::string& s);

struct LiconetSpec {
  int stem_channels = 88;
  int stem_kernel = 5;
  int stem_stride = 2;
  int blocks = 5;
  int width = 88;
  int expansion = 6;
  int kernel = 5;
  int block1_stride = 3;  // temporal subsampling lives in the first block
};

struct ConformerSpec {
  int dim = 128;
  int blocks = 6;
  int heads = 2;
  int ffn_hidden = 192;
  int conv_kernel = 7;
  int rel_pos_clip = 64;  // learned per-head relative position bias
};

struct EcapaSpec {
  int channels = 128;
  int se_bottleneck = 64;
  int res2_scale = 8;
  int stem_kernel = 5;
  int stem_stride = 3;
  std::vector<int> dilations = {2, 3, 4};
  int agg_channels = 352;
};

struct EncoderConfig {
  EncoderFamily family = EncoderFamily::kLiconet;
  double scale = 1.0;  // width multiplier for desk-scale runs
  LiconetSpec liconet;
  ConformerSpec conformer;
  EcapaSpec ecapa;

  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);

  // Width scaling rounds to a multiple of 8 (floor 8) so group/head splits
  // stay valid at any scale.
  LiconetSpec scaled_liconet() const;
  ConformerSpec scaled_conformer() const;
  EcapaSpec scaled_ecapa() const;
};

int64_t scale_width(int64_t w, double scale);

class Encoder : public nn::Module {
 public:
  using nn::Module::Module;
  virtual ag::Value forward(const ag::Value& x) = 0;  // [N,40,T] -> [N,D,T']
  virtual int64_t out_dim() const = 0;
  virtual int64_t out_frames(int64_t t_in) const = 0;
};

// ---- LiCoNet ----

// Bottleneck of one temporal convolution and two pointwise convolutions with
// an inverted-bottleneck expansion; residual when input/output shapes match.
class LicoBlock : public nn::Module {
 public:
  LicoBlock(std::string path, uint64_t seed, int64_t in_ch, int64_t out_ch,
            int expansion, int kernel, int stride, bool residual);
  ag::Value forward(const ag::Value& x) const;
  int64_t out_frames(int64_t t_in) const { return tconv_->out_frames(t_in); }
  bool residual() const { return residual_; }

 private:
  bool residual_;
  std::unique_ptr<nn::Conv1d> tconv_, expand_, project_;
  std::unique_ptr<nn::BatchNorm1d> bn1_, bn2_, bn3_;
};

class LiCoNet : public Encoder {
 public:
  LiCoNet(std::string path, uint64_t seed, const LiconetSpec& spec);
  ag::Value forward(const ag::Value& x) override;
  int64_t out_dim() const override { return spec_.width; }
  int64_t out_frames(int64_t t_in) const override;

 private:
  LiconetSpec spec_;
  std::unique_ptr<nn::Conv1d> stem_;
  std::unique_ptr<nn::BatchNorm1d> stem_bn_;
  std::vector<std::unique_ptr<LicoBlock>> blocks_;
};

// ---- Conformer ----

class MultiHeadSelfAttention : public nn::Module {
 public:
  MultiHeadSelfAttention(std::string path, uint64_t seed, int64_t dim,
                         int heads, int rel_pos_clip);
  ag::Value forward(const ag::Value& x) const;  // [T, D] -> [T, D]

 private:
  int64_t dim_;
  int heads_, clip_;
  std::unique_ptr<nn::Linear> wq_, wk_, wv_, wo_;
  ag::Value rel_bias_;  // [heads, 2*clip+1]
};

class ConformerBlock : public nn::Module {
 public:
  ConformerBlock(std::string path, uint64_t seed, const ConformerSpec& spec);
  ag::Value forward(const ag::Value& x) const;  // [T, D] -> [T, D]

 private:
  ag::Value feed_forward(const nn::LayerNorm& ln, const nn::Linear& up,
                         const nn::Linear& down, const ag::Value& x) const;
  ag::Value conv_module(const ag::Value& x) const;

  ConformerSpec spec_;
  std::unique_ptr<nn::LayerNorm> ln_ff1_, ln_mhsa_, ln_conv_, ln_ff2_, ln_out_;
  std::unique_ptr<nn::Linear> ff1_up_, ff1_down_, ff2_up_, ff2_down_;
  std::unique_ptr<MultiHeadSelfAttention> mhsa_;
  std::unique_ptr<nn::Conv1d> conv_pw1_, conv_dw_, conv_pw2_;
  std::unique_ptr<nn::BatchNorm1d> conv_bn_;
};

class Conformer : public Encoder {
 public:
  Conformer(std::string path, uint64_t seed, const ConformerSpec& spec);
  ag::Value forward(const ag::Value& x) override;
  int64_t out_dim() const override { return spec_.dim; }
  int64_t out_frames(int64_t t_in) const override { return t_in; }

 private:
  ConformerSpec spec_;
  std::unique_ptr<nn::Linear> input_proj_;
  std::vector<std::unique_ptr<ConformerBlock>> blocks_;
};

// ---- ECAPA-TDNN ----

class SeRes2Block : public nn::Module {
 public:
  SeRes2Block(std::string path, uint64_t seed, int64_t channels, int res2_scale,
              int dilation, int64_t se_bottleneck, bool use_se = true);
  ag::Value forward(const ag::Value& x) const;

 private:
  int64_t channels_;
  int scale_;
  bool use_se_;
  std::unique_ptr<nn::Conv1d> conv_in_, conv_out_;
  std::vector<std::unique_ptr<nn::Conv1d>> res2_convs_;
  std::unique_ptr<nn::BatchNorm1d> bn_in_, bn_mid_, bn_out_;
  std::unique_ptr<nn::Linear> se_down_, se_up_;
};

class EcapaTdnn : public Encoder {
 public:
  EcapaTdnn(std::string path, uint64_t seed, const EcapaSpec& spec);
  ag::Value forward(const ag::Value& x) override;
  int64_t out_dim() const override { return spec_.agg_channels; }
  int64_t out_frames(int64_t t_in) const override;

 private:
  EcapaSpec spec_;
  std::unique_ptr<nn::Conv1d> stem_;
  std::unique_ptr<nn::BatchNorm1d> stem_bn_;
  std::vector<std::unique_ptr<SeRes2Block>> blocks_;
  std::unique_ptr<nn::Conv1d> agg_;
};

std::unique_ptr<Encoder> build_encoder(const EncoderConfig& cfg, uint64_t seed,
                                       const std::string& path = "encoder");

}  // namespace kws

#endif  // KWS_ENCODERS_HPP_
