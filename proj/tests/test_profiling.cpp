// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kws/profiling.hpp"

using namespace kws;

namespace {

ModelConfig paper(EncoderFamily family) {
  ModelConfig cfg;
  cfg.encoder.family = family;
  cfg.pooling.kind = "asp";
  cfg.pooling.asp_context = family == EncoderFamily::kEcapaTdnn;
  return cfg;
}

}  // namespace

TEST_CASE("closed-form conv flop count") {
  CHECK(conv1d_flops(4, 8, 5, 100) == 32000.0);
}

TEST_CASE("single linear layer parameter count") {
  nn::Linear lin("l", 1, 40, 10);
  CHECK(count_params(lin) == 410);
}

TEST_CASE("analytic params equal constructed-model params for every family") {
  for (EncoderFamily f : {EncoderFamily::kLiconet, EncoderFamily::kConformer,
                          EncoderFamily::kEcapaTdnn}) {
    for (double scale : {1.0, 0.25}) {
      ModelConfig cfg = paper(f);
      cfg.encoder.scale = scale;
      CostReport r = profile_model(cfg);
      EmbeddingModel model("model", 3, cfg);
      CAPTURE(family_name(f));
      CAPTURE(scale);
      CHECK(r.param_count() == count_params(model));
    }
  }
  // and with the GAP pooler
  ModelConfig cfg = paper(EncoderFamily::kLiconet);
  cfg.pooling.kind = "gap";
  CostReport r = profile_model(cfg);
  EmbeddingModel model("model", 3, cfg);
  CHECK(r.param_count() == count_params(model));
}

TEST_CASE("totals equal the sum of the per-layer breakdown") {
  ModelConfig cfg = paper(EncoderFamily::kEcapaTdnn);
  CostReport r = profile_model(cfg);
  int64_t p = 0;
  double fl = 0.0;
  for (const auto& l : r.layers) {
    p += l.params;
    fl += l.flops;
  }
  CHECK(p == r.param_count());
  CHECK(fl == r.flops());
  CHECK(r.layers.size() > 5);
}

TEST_CASE("paper-config sizes land on the published table") {
  ModelConfig ecapa = paper(EncoderFamily::kEcapaTdnn);
  CostReport re = profile_model(ecapa);
  CHECK(std::fabs(re.param_count() / 540e3 - 1.0) < 0.10);
  CHECK(std::fabs(re.flops() / 39.1e6 - 1.0) < 0.15);

  ModelConfig lico = paper(EncoderFamily::kLiconet);
  CostReport rl = profile_model(lico);
  CHECK(std::fabs(rl.param_count() / 694e3 - 1.0) < 0.10);
  CHECK(std::fabs(rl.flops() / 46.5e6 - 1.0) < 0.15);

  ModelConfig conf = paper(EncoderFamily::kConformer);
  CostReport rc = profile_model(conf);
  CHECK(std::fabs(rc.param_count() / 1.4e6 - 1.0) < 0.10);
  CHECK(std::fabs(rc.flops() / 642.2e6 - 1.0) < 0.15);
}

TEST_CASE("doubling widths multiplies dense conv flops by four") {
  ModelConfig cfg = paper(EncoderFamily::kLiconet);
  cfg.encoder.scale = 2.0;
  ModelConfig base = paper(EncoderFamily::kLiconet);
  auto conv_flops = [](const CostReport& r) {
    double f = 0.0;
    for (const auto& l : r.layers)
      if (l.name.find("tconv") != std::string::npos ||
          l.name.find("expand") != std::string::npos ||
          l.name.find("project") != std::string::npos)
        f += l.flops;
    return f;
  };
  double f1 = conv_flops(profile_model(base));
  double f2 = conv_flops(profile_model(cfg));
  CHECK(f2 == doctest::Approx(4.0 * f1).epsilon(1e-12));
}

TEST_CASE("flops scale linearly with input frames for stride-1 stacks") {
  ModelConfig cfg = paper(EncoderFamily::kConformer);
  // isolate the per-frame linear/conv layers (attention is quadratic)
  auto linear_flops = [](const CostReport& r) {
    double f = 0.0;
    for (const auto& l : r.layers)
      if (l.name.find("attention") == std::string::npos &&
          l.name.find("pooler") == std::string::npos)
        f += l.flops;
    return f;
  };
  double f1 = linear_flops(profile_model(cfg, 100));
  double f2 = linear_flops(profile_model(cfg, 200));
  CHECK(f2 == doctest::Approx(2.0 * f1).epsilon(1e-12));
}
