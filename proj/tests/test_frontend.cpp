// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "kws/common.hpp"
#include "kws/frontend.hpp"

using namespace kws;

namespace {

AudioBuffer make_sine(double freq, int64_t n, double amp = 0.5) {
  AudioBuffer a;
  a.samples.resize(n);
  for (int64_t i = 0; i < n; ++i)
    a.samples[i] = amp * std::sin(2.0 * M_PI * freq * i / kSampleRate);
  return a;
}

}  // namespace

TEST_CASE("standardize_segment pads symmetrically, extra sample right") {
  AudioBuffer a;
  a.samples.assign(16000, 0.25);  // 1 s
  AudioBuffer out = standardize_segment(a);
  REQUIRE(out.samples.size() == 32000);
  CHECK(out.samples[7999] == 0.0);
  CHECK(out.samples[8000] == 0.25);
  CHECK(out.samples[23999] == 0.25);
  CHECK(out.samples[24000] == 0.0);

  // odd remainder: 31999 samples -> pad 1, goes to the right
  a.samples.assign(31999, 0.5);
  out = standardize_segment(a);
  REQUIRE(out.samples.size() == 32000);
  CHECK(out.samples[0] == 0.5);
  CHECK(out.samples[31999] == 0.0);
}

TEST_CASE("standardize_segment clips symmetrically") {
  AudioBuffer a;
  a.samples.resize(48000);  // 3 s
  for (size_t i = 0; i < a.samples.size(); ++i)
    a.samples[i] = static_cast<double>(i);
  AudioBuffer out = standardize_segment(a);
  REQUIRE(out.samples.size() == 32000);
  CHECK(out.samples.front() == 8000.0);
  CHECK(out.samples.back() == 39999.0);
}

TEST_CASE("standardize_segment identity on 2 s input and idempotent") {
  AudioBuffer a = make_sine(440.0, 32000);
  AudioBuffer out = standardize_segment(a);
  CHECK(out.samples == a.samples);
  AudioBuffer out2 = standardize_segment(out);
  CHECK(out2.samples == out.samples);
}

TEST_CASE("standardize_segment rejects empty input") {
  AudioBuffer a;
  CHECK_THROWS_WITH_AS(standardize_segment(a), "empty segment", DataError);
}

TEST_CASE("frame count formula") {
  LogMelExtractor fe;
  AudioBuffer a = make_sine(200.0, 32000);
  Tensor feats = fe.compute(a);
  CHECK(feats.dim(0) == 198);
  CHECK(feats.dim(1) == 40);

  // closed-form framing over a sweep of lengths incl. every shift residue
  for (int64_t n = 400; n <= 64000; n += 157) {
    int64_t expect = 1 + (n - 400) / 160;
    CHECK(LogMelExtractor::num_frames(n) == expect);
  }
  CHECK(LogMelExtractor::num_frames(399) == 0);
  CHECK(LogMelExtractor::num_frames(400) == 1);
  CHECK(LogMelExtractor::num_frames(64000) == 1 + (64000 - 400) / 160);
}

TEST_CASE("all-zero audio hits the log floor everywhere") {
  LogMelExtractor fe;
  AudioBuffer a;
  a.samples.assign(3200, 0.0);
  Tensor feats = fe.compute(a);
  const double expect = std::log(1e-10);
  for (int64_t i = 0; i < feats.numel(); ++i)
    CHECK(feats[i] == doctest::Approx(expect));
}

TEST_CASE("pure 1 kHz sine peaks in the filter nearest 1 kHz") {
  LogMelExtractor fe;
  // filter whose center frequency is nearest 1 kHz, found analytically from
  // the published Mel spacing
  const auto& centers = fe.center_freqs();
  int expect_ch = 0;
  double best = 1e30;
  for (size_t m = 0; m < centers.size(); ++m) {
    double d = std::fabs(centers[m] - 1000.0);
    if (d < best) {
      best = d;
      expect_ch = static_cast<int>(m);
    }
  }
  AudioBuffer a = make_sine(1000.0, 16000);
  Tensor feats = fe.compute(a);
  for (int64_t t = 0; t < feats.dim(0); ++t) {
    int arg = 0;
    double mx = feats.at2(t, 0);
    for (int m = 1; m < kNumMels; ++m)
      if (feats.at2(t, m) > mx) {
        mx = feats.at2(t, m);
        arg = m;
      }
    CHECK(arg == expect_ch);
  }
}

TEST_CASE("trailing samples outside the last window do not change output") {
  LogMelExtractor fe;
  Rng rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    int64_t n = 400 + rng.uniform_int(4000);
    AudioBuffer a;
    a.samples.resize(n);
    for (auto& s : a.samples) s = rng.uniform(-0.8, 0.8);
    Tensor base = fe.compute(a);
    // append fewer samples than needed to complete another frame
    int64_t used = 400 + (base.dim(0) - 1) * 160;
    int64_t room = 160 - (n - used) - 1;
    if (room <= 0) continue;
    AudioBuffer b = a;
    for (int64_t i = 0; i < room; ++i) b.samples.push_back(rng.uniform(-1, 1));
    Tensor ext = fe.compute(b);
    REQUIRE(ext.dim(0) == base.dim(0));
    for (int64_t i = 0; i < base.numel(); ++i) CHECK(ext[i] == base[i]);
  }
}

TEST_CASE("compute_logmel rejects too-short audio") {
  LogMelExtractor fe;
  AudioBuffer a;
  a.samples.assign(399, 0.1);
  CHECK_THROWS_WITH_AS(fe.compute(a), "segment too short", DataError);
}

TEST_CASE("wav round trip and format rejection") {
  AudioBuffer a = make_sine(500.0, 8000, 0.7);
  std::string path = "test_frontend_tmp.wav";
  write_wav(path, a);
  AudioBuffer b = read_wav(path);
  REQUIRE(b.samples.size() == a.samples.size());
  double max_err = 0.0;
  for (size_t i = 0; i < a.samples.size(); ++i)
    max_err = std::max(max_err, std::fabs(a.samples[i] - b.samples[i]));
  CHECK(max_err < 1.0 / 32000.0);

  // stereo file must be rejected with the channel count in the message
  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  bytes[22] = 2;  // channel field
  std::string bad = "test_frontend_bad.wav";
  std::ofstream out(bad, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  CHECK_THROWS_AS(read_wav(bad), DataError);
  try {
    read_wav(bad);
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("channel") != std::string::npos);
  }
  std::remove(path.c_str());
  std::remove(bad.c_str());
}

TEST_CASE("logmel is deterministic") {
  LogMelExtractor fe;
  AudioBuffer a = make_sine(731.0, 12345, 0.3);
  Tensor x = fe.compute(a);
  Tensor y = fe.compute(a);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(x[i] == y[i]);
}
