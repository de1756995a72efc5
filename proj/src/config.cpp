// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#include "kws/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace kws {

namespace {

// Structural schema: known keys per object, checked recursively so typos
// fail fast with their dotted path.
void check_known_keys(const nlohmann::json& j, const std::string& path,
                      const std::set<std::string>& known) {
  if (!j.is_object())
    throw ConfigError("config field '" + path + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key))
      throw ConfigError("unknown config field '" +
                        (path.empty() ? key : path + "." + key) + "'");
  }
}

void validate_structure(const nlohmann::json& j) {
  check_known_keys(j, "", {"seed", "output_dir", "manifest_dir", "vocab_top",
                           "model", "loss", "train", "eval"});
  if (j.contains("model")) {
    check_known_keys(j.at("model"), "model", {"encoder", "pooling"});
    if (j.at("model").contains("encoder"))
      check_known_keys(j.at("model").at("encoder"), "model.encoder",
                       {"family", "scale", "liconet", "conformer", "ecapa"});
    if (j.at("model").contains("pooling"))
      check_known_keys(
          j.at("model").at("pooling"), "model.pooling",
          {"kind", "embedding_dim", "asp_bottleneck", "asp_context",
           "ratio_spectral", "ratio_temporal", "ratio_spectro_temporal",
           "gap_attention_dim", "gap_spectral_groups", "gap_temporal_chunk"});
  }
  if (j.contains("loss"))
    check_known_keys(j.at("loss"), "loss",
                     {"word_loss", "speaker_weight", "phoneme_weight",
                      "word_aam", "word_softtriple", "speaker_aam",
                      "phoneme_aam"});
  if (j.contains("train"))
    check_known_keys(j.at("train"), "train",
                     {"epochs", "batch_size", "lr_min", "lr_max",
                      "half_cycle_steps", "grad_clip", "seed"});
  if (j.contains("eval"))
    check_known_keys(j.at("eval"), "eval",
                     {"enroll_count", "hop_seconds", "target_fa_per_hour",
                      "lockout_seconds", "seed"});
}

}  // namespace

void RunConfig::validate() const {
  check_config(vocab_top >= 1, "vocab_top must be >= 1");
  model.validate();
  loss.validate();
  train.validate();
  eval.validate();
}

nlohmann::json RunConfig::to_json() const {
  return nlohmann::json{{"seed", seed},
                        {"output_dir", output_dir},
                        {"manifest_dir", manifest_dir},
                        {"vocab_top", vocab_top},
                        {"model", model.to_json()},
                        {"loss", loss.to_json()},
                        {"train", train.to_json()},
                        {"eval", eval.to_json()}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  validate_structure(j);
  RunConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.manifest_dir = j.value("manifest_dir", c.manifest_dir);
    c.vocab_top = j.value("vocab_top", c.vocab_top);
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
    if (j.contains("loss"))
      c.loss = HybridLossConfig::from_json(j.at("loss"));
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train"));
    if (j.contains("eval")) c.eval = EvalConfig::from_json(j.at("eval"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config type error: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  check_config(in.good(), "cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
  return from_json(j);
}

std::string RunConfig::resolved_output_dir() const {
  const char* root = std::getenv("KWS_OUTPUT_ROOT");
  if (root && *root && !output_dir.empty() && output_dir.front() != '/')
    return std::string(root) + "/" + output_dir;
  return output_dir;
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  auto eq = assignment.find('=');
  check_config(eq != std::string::npos,
               "override must be key=value, got '" + assignment + "'");
  std::string key = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);
  nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = value;

  nlohmann::json* cur = &doc;
  size_t pos = 0;
  while (true) {
    size_t dot = key.find('.', pos);
    std::string part = key.substr(pos, dot == std::string::npos ? dot : dot - pos);
    check_config(!part.empty(), "empty path segment in override '" + key + "'");
    if (dot == std::string::npos) {
      (*cur)[part] = parsed;
      break;
    }
    cur = &(*cur)[part];
    pos = dot + 1;
  }
}

}  // namespace kws
