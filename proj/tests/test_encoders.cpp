// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "kws/encoders.hpp"
#include "kws/frontend.hpp"
#include "support/gradcheck.hpp"

using namespace kws;
using ag::Value;
using test::random_tensor;

namespace {

EncoderConfig tiny(EncoderFamily family) {
  EncoderConfig cfg;
  cfg.family = family;
  cfg.liconet = {8, 3, 2, 2, 8, 2, 3, 2};
  cfg.conformer = {8, 1, 2, 12, 3, 4};
  cfg.ecapa = {8, 4, 4, 3, 2, {2}, 8};
  return cfg;
}

Value weighted_sum(const Value& v, uint64_t seed = 3) {
  return ag::sum_all(ag::mul(v, ag::constant(random_tensor(v->val.shape(), seed, 0.1, 1.1))));
}

}  // namespace

TEST_CASE("shape contracts at paper configs") {
  Tensor mel = random_tensor({1, 40, 198}, 1, -1.0, 1.0);
  ag::NoGradGuard ng;

  EncoderConfig li;
  li.family = EncoderFamily::kLiconet;
  auto lico = build_encoder(li, 7);
  Value out = lico->forward(ag::constant(mel));
  CHECK(out->val.dim(1) == 88);
  CHECK(out->val.dim(2) == lico->out_frames(198));
  CHECK(lico->out_frames(198) == 33);
  CHECK(out->val.all_finite());

  EncoderConfig co;
  co.family = EncoderFamily::kConformer;
  auto conf = build_encoder(co, 7);
  Value cout_ = conf->forward(ag::constant(mel));
  CHECK(cout_->val.dim(1) == 128);
  CHECK(cout_->val.dim(2) == 198);
  CHECK(cout_->val.all_finite());

  EncoderConfig ec;
  ec.family = EncoderFamily::kEcapaTdnn;
  auto ecapa = build_encoder(ec, 7);
  Value eout = ecapa->forward(ag::constant(mel));
  CHECK(eout->val.dim(1) == 352);
  CHECK(eout->val.dim(2) == ecapa->out_frames(198));
  CHECK(ecapa->out_frames(198) == 66);
  CHECK(eout->val.all_finite());
}

TEST_CASE("encoders are deterministic given identical params and input") {
  Tensor mel = random_tensor({2, 40, 30}, 5, -1.0, 1.0);
  for (EncoderFamily f : {EncoderFamily::kLiconet, EncoderFamily::kConformer,
                          EncoderFamily::kEcapaTdnn}) {
    auto e1 = build_encoder(tiny(f), 99);
    auto e2 = build_encoder(tiny(f), 99);
    e1->set_training(false);
    e2->set_training(false);
    ag::NoGradGuard ng;
    Value o1 = e1->forward(ag::constant(mel));
    Value o2 = e2->forward(ag::constant(mel));
    REQUIRE(o1->val.numel() == o2->val.numel());
    for (int64_t i = 0; i < o1->val.numel(); ++i) CHECK(o1->val[i] == o2->val[i]);
  }
}

TEST_CASE("construction-time validation errors") {
  EncoderConfig co = tiny(EncoderFamily::kConformer);
  co.conformer.dim = 9;  // not divisible by 2 heads
  CHECK_THROWS_AS(build_encoder(co, 1), ConfigError);

  EncoderConfig ec = tiny(EncoderFamily::kEcapaTdnn);
  ec.ecapa.channels = 8;
  ec.ecapa.res2_scale = 3;
  CHECK_THROWS_AS(build_encoder(ec, 1), ConfigError);

  // residual forced onto a mismatched block
  CHECK_THROWS_AS(LicoBlock("b", 1, 4, 8, 2, 3, 1, /*residual=*/true),
                  ConfigError);
  CHECK_THROWS_AS(LicoBlock("b", 1, 8, 8, 2, 3, 2, /*residual=*/true),
                  ConfigError);
}

TEST_CASE("lico block with zeroed conv path is the identity") {
  LicoBlock block("b", 3, 6, 6, 2, 3, 1, /*residual=*/true);
  block.set_training(false);  // running stats at init make BN the identity
  for (auto& [name, p] : block.named_params()) {
    if (name.find("tconv") != std::string::npos) p->val.fill(0.0);
    if (name.find("expand.bias") != std::string::npos) p->val.fill(0.0);
    if (name.find("project.bias") != std::string::npos) p->val.fill(0.0);
  }
  Tensor x = random_tensor({1, 6, 9}, 31);
  ag::NoGradGuard ng;
  Value out = block.forward(ag::constant(x));
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(out->val[i] == doctest::Approx(x[i]).epsilon(1e-12));
}

TEST_CASE("conformer handles a single-frame input") {
  auto cfg = tiny(EncoderFamily::kConformer);
  auto enc = build_encoder(cfg, 17);
  enc->set_training(false);
  Tensor mel = random_tensor({1, 40, 1}, 33);
  ag::NoGradGuard ng;
  Value out = enc->forward(ag::constant(mel));
  CHECK(out->val.dim(2) == 1);
  CHECK(out->val.all_finite());

  // with one frame, attention is a weight-1 average of the single value row
  MultiHeadSelfAttention mhsa("m", 4, 8, 2, 4);
  Tensor x = random_tensor({1, 8}, 34);
  Value direct = mhsa.forward(ag::constant(x));
  CHECK(direct->val.all_finite());
  CHECK(direct->val.dim(0) == 1);
}

TEST_CASE("se gate forced to one equals the plain res2 block") {
  SeRes2Block gated("b", 5, 8, 4, 2, 4, /*use_se=*/true);
  SeRes2Block plain("b", 5, 8, 4, 2, 4, /*use_se=*/false);
  gated.set_training(false);
  plain.set_training(false);
  // saturate the gate: sigmoid(large bias) ~ 1
  for (auto& [name, p] : gated.named_params()) {
    if (name.find("se_up.bias") != std::string::npos) p->val.fill(100.0);
    if (name.find("se_up.weight") != std::string::npos) p->val.fill(0.0);
  }
  Tensor x = random_tensor({1, 8, 7}, 51);
  ag::NoGradGuard ng;
  Value a = gated.forward(ag::constant(x));
  Value b = plain.forward(ag::constant(x));
  for (int64_t i = 0; i < a->val.numel(); ++i)
    CHECK(a->val[i] == doctest::Approx(b->val[i]).epsilon(1e-12));
}

TEST_CASE("block-level gradients match finite differences") {
  Tensor x = random_tensor({1, 8, 10}, 61, -0.5, 0.5);

  LicoBlock lico("lb", 71, 8, 8, 2, 3, 1, true);
  auto r1 = test::grad_check_module(
      [&] { return weighted_sum(lico.forward(ag::constant(x))); }, lico);
  CHECK(r1.max_rel_err < 1e-4);

  SeRes2Block se("sb", 72, 8, 4, 2, 4);
  auto r2 = test::grad_check_module(
      [&] { return weighted_sum(se.forward(ag::constant(x))); }, se);
  CHECK(r2.max_rel_err < 1e-4);

  ConformerSpec cs{8, 1, 2, 12, 3, 4};
  ConformerBlock cb("cb", 73, cs);
  Tensor xt = random_tensor({10, 8}, 62, -0.5, 0.5);
  auto r3 = test::grad_check_module(
      [&] { return weighted_sum(cb.forward(ag::constant(xt))); }, cb);
  CHECK(r3.max_rel_err < 1e-4);
}

TEST_CASE("full tiny encoders: gradients w.r.t. every parameter") {
  Tensor mel = random_tensor({1, 40, 10}, 81, -0.5, 0.5);
  for (EncoderFamily f : {EncoderFamily::kLiconet, EncoderFamily::kConformer,
                          EncoderFamily::kEcapaTdnn}) {
    auto enc = build_encoder(tiny(f), 91);
    auto res = test::grad_check(
        [&] { return weighted_sum(enc->forward(ag::constant(mel))); },
        enc->named_params());
    CAPTURE(family_name(f));
    CAPTURE(res.worst);
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("encoder config json round trip") {
  EncoderConfig cfg = tiny(EncoderFamily::kEcapaTdnn);
  cfg.scale = 0.25;
  EncoderConfig back = EncoderConfig::from_json(cfg.to_json());
  CHECK(back.family == cfg.family);
  CHECK(back.scale == cfg.scale);
  CHECK(back.ecapa.channels == cfg.ecapa.channels);
  CHECK(back.liconet.width == cfg.liconet.width);
  CHECK(back.conformer.blocks == cfg.conformer.blocks);
}

TEST_CASE("scale multiplier rounds widths to multiples of eight") {
  EncoderConfig cfg;
  cfg.family = EncoderFamily::kLiconet;
  cfg.scale = 0.25;
  LiconetSpec s = cfg.scaled_liconet();
  CHECK(s.width == 24);  // 88 * 0.25 = 22 -> nearest multiple of 8
  CHECK(s.stem_channels == 24);
  cfg.scale = 0.01;
  CHECK(cfg.scaled_liconet().width == 8);  // floor
}
