// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0
//
// Analytic parameter and FLOP counting for any model configuration on a 2 s
// input. Conventions: FLOPs are 2x multiply-accumulates for convolutions and
// linear maps (kernel terms only; biases, norms and activations excluded);
// attention contributes its QK, softmax and AV terms; statistics that are
// fixed per utterance (SE gates, pooled projections, the context part of the
// attentive scorer) are counted once rather than per frame.

#ifndef KWS_PROFILING_HPP_
#define KWS_PROFILING_HPP_

#include <string>
#include <vector>

#include "kws/model.hpp"

namespace kws {

struct LayerCost {
  std::string name;
  int64_t params = 0;
  double flops = 0.0;
  int64_t frames_out = 0;
};

struct CostReport {
  std::vector<LayerCost> layers;
  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& l : layers) n += l.params;
    return n;
  }
  double flops() const {
    double f = 0.0;
    for (const auto& l : layers) f += l.flops;
    return f;
  }
};

// Closed-form costs for the encoder + pooler + projection of `cfg` (task
// heads excluded) on `input_frames` feature frames.
CostReport profile_model(const ModelConfig& cfg, int64_t input_frames = 198);

// Trainable parameter elements of a constructed module.
int64_t count_params(const nn::Module& module);

// Helper used by the closed-form conv example and the per-layer table.
double conv1d_flops(int64_t c_in, int64_t c_out, int64_t kernel,
                    int64_t frames_out, int64_t groups = 1);

}  // namespace kws

#endif  // KWS_PROFILING_HPP_
