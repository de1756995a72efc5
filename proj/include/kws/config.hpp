// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0
//
// Run configuration: one JSON document driving prepare/train/evaluate.
// Documents are validated structurally before any work starts; unknown or
// ill-typed fields are reported with their dotted path.

#ifndef KWS_CONFIG_HPP_
#define KWS_CONFIG_HPP_

#include <string>

#include "kws/evaluation.hpp"
#include "kws/model.hpp"
#include "kws/training.hpp"

namespace kws {

struct RunConfig {
  uint64_t seed = 1234;
  std::string output_dir = "out";
  std::string manifest_dir;
  int64_t vocab_top = 1000;
  ModelConfig model;
  HybridLossConfig loss;
  TrainConfig train;
  EvalConfig eval;

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);

  // Resolves output_dir against the KWS_OUTPUT_ROOT environment variable
  // when the configured path is relative.
  std::string resolved_output_dir() const;
};

// Applies a dotted-path override such as "train.epochs=10" or
// "model.pooling.kind=gap". Values parse as JSON scalars, falling back to
// plain strings.
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace kws

#endif  // KWS_CONFIG_HPP_
