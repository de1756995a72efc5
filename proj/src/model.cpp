// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#include "kws/model.hpp"

#include <cstring>
#include <fstream>

namespace kws {

EmbeddingModel::EmbeddingModel(std::string path, uint64_t seed,
                               const ModelConfig& cfg)
    : nn::Module(std::move(path), seed), cfg_(cfg) {
  cfg_.validate();
  encoder_ = build_encoder(cfg.encoder, seed, child_path("encoder"));
  pooler_ = build_pooler(cfg.pooling, encoder_->out_dim(), seed,
                         child_path("pooler"));
  adopt(encoder_.get());
  adopt(pooler_.get());
}

Tensor EmbeddingModel::embed_single(const Tensor& mel_frames) {
  const int64_t t = mel_frames.dim(0);
  const int64_t d = mel_frames.dim(1);
  Tensor x({1, d, t});
  for (int64_t i = 0; i < t; ++i)
    for (int64_t j = 0; j < d; ++j) x.at3(0, j, i) = mel_frames.at2(i, j);
  bool was_training = training();
  set_training(false);
  Tensor out;
  {
    ag::NoGradGuard ng;
    ag::Value emb = embed(frames(ag::constant(x)));
    out = Tensor::from_flat({embedding_dim()}, emb->val.flat());
  }
  set_training(was_training);
  return out;
}

int64_t EmbeddingModel::label_source_frame(int64_t out_frame,
                                           int64_t t_in) const {
  const int64_t t_out = encoder_->out_frames(t_in);
  int64_t src = static_cast<int64_t>(
      (static_cast<double>(out_frame) + 0.5) * static_cast<double>(t_in) /
      static_cast<double>(t_out));
  return std::min(t_in - 1, std::max<int64_t>(0, src));
}

TrainModel::TrainModel(std::string path, uint64_t seed,
                       const ModelConfig& model_cfg,
                       const HybridLossConfig& loss_cfg, int64_t word_classes,
                       int64_t speaker_classes, int64_t phoneme_classes)
    : nn::Module(std::move(path), seed) {
  base_ = std::make_unique<EmbeddingModel>(child_path("model"), seed, model_cfg);
  heads_ = std::make_unique<MultiTaskHeads>(
      child_path("heads"), seed, base_->embedding_dim(),
      base_->encoder().out_dim(), word_classes, speaker_classes,
      phoneme_classes, loss_cfg);
  adopt(base_.get());
  adopt(heads_.get());
}

namespace {

constexpr char kMagic[8] = {'K', 'W', 'S', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::string& s, uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t get_u64(const unsigned char* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

nlohmann::json tensor_table(const std::map<std::string, Tensor>& tensors,
                            uint64_t* offset) {
  nlohmann::json table = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    table.push_back({{"name", name},
                     {"shape", t.shape()},
                     {"offset", *offset},
                     {"numel", t.numel()}});
    *offset += static_cast<uint64_t>(t.numel());
  }
  return table;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& model_cfg,
                     const HybridLossConfig& loss_cfg, const Vocabulary& vocab,
                     nn::Module& module,
                     const std::map<std::string, Tensor>& opt_state,
                     const CheckpointMeta& meta) {
  std::map<std::string, Tensor> tensors;
  for (const auto& [name, p] : module.named_params()) tensors[name] = p->val;
  for (const auto& [name, b] : module.named_buffers()) tensors[name] = *b;

  uint64_t offset = 0;
  nlohmann::json header{{"format_version", 1},
                        {"model", model_cfg.to_json()},
                        {"loss", loss_cfg.to_json()},
                        {"vocab", vocab.to_json()},
                        {"meta", {{"epoch", meta.epoch}, {"step", meta.step}}},
                        {"tensors", tensor_table(tensors, &offset)},
                        {"opt_state", tensor_table(opt_state, &offset)}};
  std::string head = header.dump();

  std::string out;
  out.append(kMagic, 8);
  put_u64(out, head.size());
  out += head;
  auto append_payload = [&out](const std::map<std::string, Tensor>& ts) {
    for (const auto& [name, t] : ts) {
      const char* raw = reinterpret_cast<const char*>(t.data());
      out.append(raw, static_cast<size_t>(t.numel()) * sizeof(double));
    }
  };
  append_payload(tensors);
  append_payload(opt_state);

  std::ofstream f(path, std::ios::binary);
  check_data(f.good(), "cannot write checkpoint: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  check_data(f.good(), "short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check_data(in.good(), "cannot open checkpoint: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  check_data(buf.size() >= 16 && std::memcmp(buf.data(), kMagic, 8) == 0,
             "not a checkpoint file (bad magic): " + path);
  uint64_t head_len = get_u64(buf.data() + 8);
  check_data(buf.size() >= 16 + head_len, "truncated checkpoint header: " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.begin() + 16,
                                   buf.begin() + 16 + static_cast<int64_t>(head_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint header: " + std::string(e.what()));
  }
  check_data(header.value("format_version", 0) == 1,
             "unsupported checkpoint version in " + path);

  Checkpoint ckpt;
  ckpt.model_cfg = ModelConfig::from_json(header.at("model"));
  ckpt.loss_cfg = HybridLossConfig::from_json(header.at("loss"));
  ckpt.vocab = Vocabulary::from_json(header.at("vocab"));
  ckpt.meta.epoch = header.at("meta").value("epoch", 0);
  ckpt.meta.step = header.at("meta").value("step", 0);

  const unsigned char* payload = buf.data() + 16 + head_len;
  const uint64_t payload_doubles = (buf.size() - 16 - head_len) / sizeof(double);
  auto read_table = [&](const nlohmann::json& table,
                        std::map<std::string, Tensor>& out) {
    for (const auto& e : table) {
      std::string name = e.at("name").get<std::string>();
      std::vector<int64_t> shape = e.at("shape").get<std::vector<int64_t>>();
      uint64_t off = e.at("offset").get<uint64_t>();
      int64_t numel = e.at("numel").get<int64_t>();
      check_data(off + static_cast<uint64_t>(numel) <= payload_doubles,
                 "checkpoint tensor out of bounds: " + name);
      std::vector<double> data(static_cast<size_t>(numel));
      std::memcpy(data.data(), payload + off * sizeof(double),
                  static_cast<size_t>(numel) * sizeof(double));
      out[name] = Tensor::from_flat(shape, std::move(data));
    }
  };
  read_table(header.at("tensors"), ckpt.tensors);
  read_table(header.at("opt_state"), ckpt.opt_state);
  return ckpt;
}

void restore_module(nn::Module& module, const Checkpoint& ckpt) {
  for (auto& [name, p] : module.named_params()) {
    auto it = ckpt.tensors.find(name);
    check_data(it != ckpt.tensors.end(),
               "checkpoint missing parameter '" + name + "'");
    check_data(it->second.shape() == p->val.shape(),
               "checkpoint shape mismatch for '" + name + "': file " +
                   it->second.shape_str() + " vs model " + p->val.shape_str());
    p->val = it->second;
  }
  for (auto& [name, b] : module.named_buffers()) {
    auto it = ckpt.tensors.find(name);
    check_data(it != ckpt.tensors.end(),
               "checkpoint missing buffer '" + name + "'");
    *b = it->second;
  }
}

}  // namespace kws
