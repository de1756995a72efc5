// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "kws/losses.hpp"
#include "support/gradcheck.hpp"

using namespace kws;
using ag::Value;
using test::random_tensor;

namespace {

// Direct evaluation of the additive-angular-margin expression with plain
// loops; the independent oracle for the implementation path.
double aam_oracle(const std::vector<double>& emb,
                  const std::vector<std::vector<double>>& w, int64_t y,
                  double m, double s) {
  auto norm = [](const std::vector<double>& v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    return std::sqrt(n);
  };
  double en = norm(emb);
  std::vector<double> cos(w.size());
  for (size_t j = 0; j < w.size(); ++j) {
    double dot = 0.0;
    for (size_t i = 0; i < emb.size(); ++i) dot += emb[i] * w[j][i];
    cos[j] = dot / (en * norm(w[j]));
  }
  double theta_y = std::acos(std::max(-1.0, std::min(1.0, cos[static_cast<size_t>(y)])));
  double num = std::exp(s * std::cos(theta_y + m));
  double den = num;
  for (size_t j = 0; j < w.size(); ++j)
    if (static_cast<int64_t>(j) != y) den += std::exp(s * cos[j]);
  return -std::log(num / den);
}

// Direct evaluation of the SoftTriple expression.
double softtriple_oracle(const std::vector<double>& emb,
                         const std::vector<std::vector<double>>& centers,
                         int64_t num_classes, int64_t k, int64_t y,
                         double lambda, double delta, double gamma) {
  auto norm = [](const std::vector<double>& v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    return std::sqrt(n);
  };
  double en = norm(emb);
  std::vector<double> sprime(static_cast<size_t>(num_classes), 0.0);
  for (int64_t c = 0; c < num_classes; ++c) {
    std::vector<double> sim(static_cast<size_t>(k));
    for (int64_t kk = 0; kk < k; ++kk) {
      const auto& wc = centers[static_cast<size_t>(c * k + kk)];
      double dot = 0.0;
      for (size_t i = 0; i < emb.size(); ++i) dot += emb[i] * wc[i];
      sim[static_cast<size_t>(kk)] = dot / (en * norm(wc));
    }
    double mx = sim[0];
    for (double v : sim) mx = std::max(mx, v);
    double zs = 0.0;
    for (double v : sim) zs += std::exp((v - mx) / gamma);
    for (int64_t kk = 0; kk < k; ++kk) {
      double q = std::exp((sim[static_cast<size_t>(kk)] - mx) / gamma) / zs;
      sprime[static_cast<size_t>(c)] += q * sim[static_cast<size_t>(kk)];
    }
  }
  double num = std::exp(lambda * (sprime[static_cast<size_t>(y)] - delta));
  double den = num;
  for (int64_t c = 0; c < num_classes; ++c)
    if (c != y) den += std::exp(lambda * sprime[static_cast<size_t>(c)]);
  return -std::log(num / den);
}

std::vector<std::vector<double>> head_rows(const ClassifierHead& head) {
  std::vector<std::vector<double>> rows;
  const Tensor& w = head.weight()->val;
  for (int64_t r = 0; r < w.dim(0); ++r) {
    std::vector<double> row(static_cast<size_t>(w.dim(1)));
    for (int64_t i = 0; i < w.dim(1); ++i)
      row[static_cast<size_t>(i)] = w.at2(r, i);
    rows.push_back(std::move(row));
  }
  return rows;
}

double softmax_ce(const std::vector<double>& logits, int64_t y) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  return -(logits[static_cast<size_t>(y)] - mx - std::log(z));
}

}  // namespace

TEST_CASE("aam matches a direct evaluation of the margin expression") {
  for (uint64_t trial = 0; trial < 10; ++trial) {
    ClassifierHead head("h", 900 + trial, 6, 4);
    Value emb = ag::param(random_tensor({1, 6}, 300 + trial));
    int64_t y = static_cast<int64_t>(trial % 4);
    AAMConfig cfg;
    Value loss = aam_loss(emb, head, {y}, cfg);
    std::vector<double> e(emb->val.flat());
    double expect = aam_oracle(e, head_rows(head), y, cfg.margin, cfg.scale);
    CHECK(loss->val[0] == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("aam colinear two-class value") {
  // embedding colinear with w_y, other column orthogonal
  ClassifierHead head("h", 1, 2, 2);
  head.weight()->val.at2(0, 0) = 1.0;
  head.weight()->val.at2(0, 1) = 0.0;
  head.weight()->val.at2(1, 0) = 0.0;
  head.weight()->val.at2(1, 1) = 1.0;
  Value emb = ag::constant(Tensor::from_flat({1, 2}, {2.5, 0.0}));
  AAMConfig cfg;  // m=0.2, s=32
  Value loss = aam_loss(emb, head, {0}, cfg);
  const double expect = std::log(1.0 + std::exp(-32.0 * std::cos(0.2)));
  CHECK(std::fabs(loss->val[0] - expect) < 1e-15);
  CHECK(loss->val[0] == doctest::Approx(2.4e-14).epsilon(0.05));
}

TEST_CASE("aam with zero margin reduces to softmax CE on scaled cosines") {
  for (uint64_t trial = 0; trial < 5; ++trial) {
    ClassifierHead head("h", 70 + trial, 5, 7);
    Value emb = ag::param(random_tensor({3, 5}, 170 + trial));
    std::vector<int64_t> ys = {1, 6, 3};
    AAMConfig cfg;
    cfg.margin = 0.0;
    Value loss = aam_loss(emb, head, ys, cfg);
    Value cos = head.cosine_logits(emb);
    double expect = 0.0;
    for (int64_t r = 0; r < 3; ++r) {
      std::vector<double> logits(7);
      for (int64_t j = 0; j < 7; ++j) logits[static_cast<size_t>(j)] = cfg.scale * cos->val.at2(r, j);
      expect += softmax_ce(logits, ys[static_cast<size_t>(r)]);
    }
    expect /= 3.0;
    CHECK(std::fabs(loss->val[0] - expect) < 1e-9);
  }
}

TEST_CASE("aam margin increases loss for a correctly classified sample") {
  ClassifierHead head("h", 7, 4, 3);
  Value emb = ag::param(random_tensor({1, 4}, 77));
  // pick the best-scoring class as the label so theta_y is smallest
  Value cos = head.cosine_logits(emb);
  int64_t y = 0;
  double best = cos->val[0];
  for (int64_t j = 1; j < 3; ++j)
    if (cos->val[j] > best) {
      best = cos->val[j];
      y = j;
    }
  AAMConfig with_m, no_m;
  no_m.margin = 0.0;
  double lm = aam_loss(emb, head, {y}, with_m)->val[0];
  double l0 = aam_loss(emb, head, {y}, no_m)->val[0];
  CHECK(lm >= l0);
}

TEST_CASE("aam rejects a zero embedding") {
  ClassifierHead head("h", 3, 4, 3);
  Value emb = ag::constant(Tensor::zeros({1, 4}));
  AAMConfig cfg;
  CHECK_THROWS_WITH_AS(aam_loss(emb, head, {0}, cfg), "degenerate embedding",
                       NumericError);
}

TEST_CASE("softtriple matches a direct evaluation of the formula") {
  SoftTripleConfig cfg;
  cfg.centers_per_class = 2;
  for (uint64_t trial = 0; trial < 10; ++trial) {
    ClassifierHead head("h", 500 + trial, 5, 3, 2);
    Value emb = ag::param(random_tensor({1, 5}, 600 + trial));
    int64_t y = static_cast<int64_t>(trial % 3);
    Value loss = softtriple_loss(emb, head, {y}, cfg);
    double expect =
        softtriple_oracle(emb->val.flat(), head_rows(head), 3, 2, y,
                          cfg.lambda, cfg.delta, cfg.gamma);
    CHECK(std::fabs(loss->val[0] - expect) < 1e-10);
  }
}

TEST_CASE("softtriple K=1 collapses to margin softmax over cosines") {
  SoftTripleConfig cfg;
  cfg.centers_per_class = 1;
  ClassifierHead head("h", 11, 6, 4, 1);
  Value emb = ag::param(random_tensor({2, 6}, 111));
  std::vector<int64_t> ys = {2, 0};
  Value loss = softtriple_loss(emb, head, ys, cfg);
  Value cos = head.cosine_logits(emb);
  double expect = 0.0;
  for (int64_t r = 0; r < 2; ++r) {
    std::vector<double> logits(4);
    for (int64_t j = 0; j < 4; ++j) {
      double v = cos->val.at2(r, j);
      if (j == ys[static_cast<size_t>(r)]) v -= cfg.delta;
      logits[static_cast<size_t>(j)] = cfg.lambda * v;
    }
    expect += softmax_ce(logits, ys[static_cast<size_t>(r)]);
  }
  expect /= 2.0;
  CHECK(std::fabs(loss->val[0] - expect) < 1e-9);

  // delta = 0, K = 1: plain CE over lambda-scaled cosines
  cfg.delta = 0.0;
  Value loss2 = softtriple_loss(emb, head, ys, cfg);
  double expect2 = 0.0;
  for (int64_t r = 0; r < 2; ++r) {
    std::vector<double> logits(4);
    for (int64_t j = 0; j < 4; ++j)
      logits[static_cast<size_t>(j)] = cfg.lambda * cos->val.at2(r, j);
    expect2 += softmax_ce(logits, ys[static_cast<size_t>(r)]);
  }
  expect2 /= 2.0;
  CHECK(std::fabs(loss2->val[0] - expect2) < 1e-9);
}

TEST_CASE("margin losses are invariant to positive rescaling of the input") {
  ClassifierHead aam_head("a", 21, 5, 4);
  ClassifierHead st_head("s", 22, 5, 4, 3);
  AAMConfig acfg;
  SoftTripleConfig scfg;
  scfg.centers_per_class = 3;
  for (double c : {0.1, 3.0}) {
    for (uint64_t trial = 0; trial < 5; ++trial) {
      Tensor base = random_tensor({2, 5}, 800 + trial);
      Tensor scaled = base;
      for (int64_t i = 0; i < scaled.numel(); ++i) scaled[i] *= c;
      std::vector<int64_t> ys = {1, 3};
      double a1 = aam_loss(ag::constant(base), aam_head, ys, acfg)->val[0];
      double a2 = aam_loss(ag::constant(scaled), aam_head, ys, acfg)->val[0];
      CHECK(std::fabs(a1 - a2) < 1e-9);
      double s1 = softtriple_loss(ag::constant(base), st_head, ys, scfg)->val[0];
      double s2 = softtriple_loss(ag::constant(scaled), st_head, ys, scfg)->val[0];
      CHECK(std::fabs(s1 - s2) < 1e-9);
    }
  }
}

TEST_CASE("losses are non-negative") {
  ClassifierHead aam_head("a", 31, 4, 5);
  ClassifierHead st_head("s", 32, 4, 5, 2);
  AAMConfig acfg;
  SoftTripleConfig scfg;
  scfg.centers_per_class = 2;
  for (uint64_t trial = 0; trial < 10; ++trial) {
    Value emb = ag::param(random_tensor({3, 4}, 900 + trial));
    std::vector<int64_t> ys = {0, 2, 4};
    CHECK(aam_loss(emb, aam_head, ys, acfg)->val[0] >= 0.0);
    CHECK(softtriple_loss(emb, st_head, ys, scfg)->val[0] >= 0.0);
  }
}

TEST_CASE("loss gradients match finite differences") {
  AAMConfig acfg;
  SoftTripleConfig scfg;
  scfg.centers_per_class = 3;
  for (uint64_t trial = 0; trial < 10; ++trial) {
    ClassifierHead ahead("a", 40 + trial, 5, 4);
    ClassifierHead shead("s", 50 + trial, 5, 4, 3);
    Value emb = ag::param(random_tensor({2, 5}, 60 + trial));
    std::vector<int64_t> ys = {static_cast<int64_t>(trial % 4), 2};
    auto params = ahead.named_params();
    params.emplace_back("emb", emb);
    auto res = test::grad_check(
        [&] { return aam_loss(emb, ahead, ys, acfg); }, params);
    CHECK(res.max_rel_err < 1e-4);

    auto sparams = shead.named_params();
    sparams.emplace_back("emb", emb);
    auto res2 = test::grad_check(
        [&] { return softtriple_loss(emb, shead, ys, scfg); }, sparams);
    CHECK(res2.max_rel_err < 1e-4);
  }
}

TEST_CASE("phoneme loss equals the mean of per-frame aam losses") {
  AAMConfig cfg;
  ClassifierHead head("p", 71, 4, 5);
  // single unmasked frame: equals aam on that frame
  Tensor frames = random_tensor({1, 4, 3}, 710);
  std::vector<int64_t> labels = {-1, 2, -1};
  Value lp = phoneme_loss(ag::constant(frames), head, labels, cfg);
  Tensor one({1, 4});
  for (int64_t dch = 0; dch < 4; ++dch) one.at2(0, dch) = frames.at3(0, dch, 1);
  Value direct = aam_loss(ag::constant(one), head, {2}, cfg);
  CHECK(lp->val[0] == doctest::Approx(direct->val[0]).epsilon(1e-12));

  // five frames: arithmetic mean of five independent evaluations
  Tensor f5 = random_tensor({1, 4, 5}, 711);
  std::vector<int64_t> l5 = {0, 1, 2, 3, 4};
  Value big = phoneme_loss(ag::constant(f5), head, l5, cfg);
  double mean = 0.0;
  for (int64_t t = 0; t < 5; ++t) {
    std::vector<double> e(4);
    for (int64_t dch = 0; dch < 4; ++dch) e[static_cast<size_t>(dch)] = f5.at3(0, dch, t);
    mean += aam_oracle(e, head_rows(head), l5[static_cast<size_t>(t)],
                       cfg.margin, cfg.scale);
  }
  mean /= 5.0;
  CHECK(big->val[0] == doctest::Approx(mean).epsilon(1e-10));

  // two frames with equal per-frame losses -> total equals that loss
  Tensor f2({1, 4, 2});
  for (int64_t dch = 0; dch < 4; ++dch) {
    f2.at3(0, dch, 0) = one.at2(0, dch);
    f2.at3(0, dch, 1) = one.at2(0, dch);
  }
  Value same = phoneme_loss(ag::constant(f2), head, {2, 2}, cfg);
  CHECK(same->val[0] == doctest::Approx(direct->val[0]).epsilon(1e-12));

  // all frames masked
  CHECK_THROWS_WITH_AS(
      phoneme_loss(ag::constant(frames), head, {-1, -1, -1}, cfg),
      "no supervised frames", NumericError);
}

TEST_CASE("hybrid loss composition and gradient decomposition") {
  const int64_t d = 4, fd = 3, n = 2, t = 4;
  HybridLossConfig cfg;
  cfg.word_loss = WordLossKind::kAam;
  MultiTaskHeads heads("heads", 81, d, fd, 3, 4, 5, cfg);
  Value emb = ag::param(random_tensor({n, d}, 810));
  Value frames = ag::param(random_tensor({n, fd, t}, 811));
  BatchLabels labels;
  labels.word = {0, 2};
  labels.speaker = {1, 3};
  labels.phoneme = {0, 1, 2, 3, 4, 0, 1, 2};

  // eta = mu = 0 -> word loss alone
  HybridLossConfig zero = cfg;
  zero.speaker_weight = 0.0;
  zero.phoneme_weight = 0.0;
  MultiTaskHeads heads0("heads", 81, d, fd, 3, 4, 5, zero);
  LossBundle b0 = heads0.compute(emb, frames, labels);
  Value word_direct = aam_loss(emb, heads0.word_head(), labels.word, cfg.word_aam);
  CHECK(b0.total->val[0] == word_direct->val[0]);

  // forward value: total = L_word + eta L_spk + mu L_phn
  LossBundle b = heads.compute(emb, frames, labels);
  CHECK(b.total->val[0] ==
        doctest::Approx(b.word + 0.1 * b.speaker + 0.5 * b.phoneme)
            .epsilon(1e-12));

  // missing supervision is named
  BatchLabels missing = labels;
  missing.speaker.clear();
  CHECK_THROWS_AS(heads.compute(emb, frames, missing), ConfigError);
  try {
    heads.compute(emb, frames, missing);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("speaker") != std::string::npos);
  }

  // gradient decomposition: d total / d emb = dW - eta dS + mu dP (via GRL),
  // for all three weight settings
  for (auto [eta, mu] : std::vector<std::pair<double, double>>{
           {0.0, 0.0}, {0.1, 0.0}, {0.1, 0.5}}) {
    HybridLossConfig hc = cfg;
    hc.speaker_weight = eta;
    hc.phoneme_weight = mu;
    MultiTaskHeads h("heads", 81, d, fd, 3, 4, 5, hc);
    std::vector<std::pair<std::string, Value>> ps = {{"emb", emb},
                                                     {"frames", frames}};
    auto res = test::grad_check(
        [&] {
          // effective objective seen by the encoder side: the GRL flips the
          // speaker term's sign
          Value w = aam_loss(emb, h.word_head(), labels.word, hc.word_aam);
          Value composed = w;
          if (eta > 0.0) {
            Value s = aam_loss(emb, h.speaker_head(), labels.speaker,
                               hc.speaker_aam);
            composed = ag::sub(composed, ag::scale(s, eta));
          }
          if (mu > 0.0) {
            Value p = phoneme_loss(frames, h.phoneme_head(), labels.phoneme,
                                   hc.phoneme_aam);
            composed = ag::add(composed, ag::scale(p, mu));
          }
          return composed;
        },
        ps, 1e-7);
    // analytic gradient from the hybrid path with GRL
    emb->grad = Tensor();
    emb->grad_ready = false;
    frames->grad = Tensor();
    frames->grad_ready = false;
    LossBundle hb = h.compute(emb, frames, labels);
    ag::backward(hb.total);
    // compare against the finite-difference of the signed composition by
    // re-running grad_check's analytic side manually
    // (grad_check already verified the signed composition's own gradient;
    // here we check the hybrid path agrees with it elementwise)
    Value signed_loss = [&] {
      Value w = aam_loss(emb, h.word_head(), labels.word, hc.word_aam);
      Value composed = w;
      if (eta > 0.0)
        composed = ag::sub(
            composed,
            ag::scale(aam_loss(emb, h.speaker_head(), labels.speaker,
                               hc.speaker_aam),
                      eta));
      if (mu > 0.0)
        composed = ag::add(
            composed,
            ag::scale(phoneme_loss(frames, h.phoneme_head(), labels.phoneme,
                                   hc.phoneme_aam),
                      mu));
      return composed;
    }();
    Tensor hybrid_grad_emb = emb->grad;
    Tensor hybrid_grad_frames = frames->grad_ready ? frames->grad
                                                   : Tensor::zeros(frames->val.shape());
    emb->grad = Tensor();
    emb->grad_ready = false;
    frames->grad = Tensor();
    frames->grad_ready = false;
    ag::backward(signed_loss);
    for (int64_t i = 0; i < emb->val.numel(); ++i)
      CHECK(hybrid_grad_emb[i] == doctest::Approx(emb->grad[i]).epsilon(1e-10));
    if (frames->grad_ready)
      for (int64_t i = 0; i < frames->val.numel(); ++i)
        CHECK(hybrid_grad_frames[i] ==
              doctest::Approx(frames->grad[i]).epsilon(1e-10));
    CHECK(res.max_rel_err < 1e-4);
  }
}
