// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0
//
// Model assembly (encoder + pooler + task heads) and the checkpoint format:
// a versioned JSON header (configs, vocabulary, tensor table) followed by a
// raw little-endian float64 payload. Serialization is bit-exact, so two
// identical training runs produce identical checkpoint files.

#ifndef KWS_MODEL_HPP_
#define KWS_MODEL_HPP_

#include <map>
#include <memory>
#include <string>

#include "kws/data.hpp"
#include "kws/encoders.hpp"
#include "kws/losses.hpp"
#include "kws/pooling.hpp"

namespace kws {

struct ModelConfig {
  EncoderConfig encoder;
  PoolingConfig pooling;

  void validate() const {
    encoder.validate();
    pooling.validate();
  }
  nlohmann::json to_json() const {
    return nlohmann::json{{"encoder", encoder.to_json()},
                          {"pooling", pooling.to_json()}};
  }
  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.encoder = EncoderConfig::from_json(j.at("encoder"));
    c.pooling = PoolingConfig::from_json(j.at("pooling"));
    return c;
  }
};

// Encoder + pooler: everything needed to embed a 2 s segment.
class EmbeddingModel : public nn::Module {
 public:
  EmbeddingModel(std::string path, uint64_t seed, const ModelConfig& cfg);

  ag::Value frames(const ag::Value& mel) { return encoder_->forward(mel); }
  ag::Value embed(const ag::Value& frame_seq) { return pooler_->forward(frame_seq); }

  Encoder& encoder() { return *encoder_; }
  Pooler& pooler() { return *pooler_; }
  const ModelConfig& config() const { return cfg_; }
  int64_t embedding_dim() const { return pooler_->embedding_dim(); }

  // [T, 40] single segment -> [d] embedding, eval mode, no graph.
  Tensor embed_single(const Tensor& mel_frames);

  // Nearest-frame mapping from encoder output frame j back to an input
  // feature frame, used to resample per-frame labels.
  int64_t label_source_frame(int64_t out_frame, int64_t t_in) const;

 private:
  ModelConfig cfg_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<Pooler> pooler_;
};

// Embedding model plus the multi-task classification heads.
class TrainModel : public nn::Module {
 public:
  TrainModel(std::string path, uint64_t seed, const ModelConfig& model_cfg,
             const HybridLossConfig& loss_cfg, int64_t word_classes,
             int64_t speaker_classes, int64_t phoneme_classes);

  EmbeddingModel& base() { return *base_; }
  MultiTaskHeads& heads() { return *heads_; }

 private:
  std::unique_ptr<EmbeddingModel> base_;
  std::unique_ptr<MultiTaskHeads> heads_;
};

struct CheckpointMeta {
  int64_t epoch = 0;
  int64_t step = 0;
};

struct Checkpoint {
  ModelConfig model_cfg;
  HybridLossConfig loss_cfg;
  Vocabulary vocab;
  std::map<std::string, Tensor> tensors;    // params and buffers
  std::map<std::string, Tensor> opt_state;  // optimizer slots, may be empty
  CheckpointMeta meta;
};

void save_checkpoint(const std::string& path, const ModelConfig& model_cfg,
                     const HybridLossConfig& loss_cfg, const Vocabulary& vocab,
                     nn::Module& module,
                     const std::map<std::string, Tensor>& opt_state,
                     const CheckpointMeta& meta);

Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint tensors into the module's parameters and buffers; shapes
// and names must match exactly.
void restore_module(nn::Module& module, const Checkpoint& ckpt);

}  // namespace kws

#endif  // KWS_MODEL_HPP_
