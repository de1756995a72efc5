// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0
//
// Audio frontend: 16 kHz PCM input, 2 s segment standardization and
// 40-dimensional log-Mel filterbank features (25 ms window, 10 ms shift).

#ifndef KWS_FRONTEND_HPP_
#define KWS_FRONTEND_HPP_

#include <string>
#include <vector>

#include "kws/common.hpp"
#include "kws/tensor.hpp"

namespace kws {

constexpr int kSampleRate = 16000;
constexpr int kFrameLength = 400;  // 25 ms
constexpr int kFrameShift = 160;   // 10 ms
constexpr int kNumMels = 40;
constexpr int kFftSize = 512;
constexpr int64_t kSegmentSamples = 32000;  // 2 s
constexpr int64_t kSegmentFrames = 198;     // 1 + (32000-400)/160

struct AudioBuffer {
  std::vector<double> samples;  // roughly [-1, 1]
  int sample_rate = kSampleRate;
};

// 16-bit PCM mono 16 kHz WAV. Any other encoding is rejected with a
// diagnostic naming the offending property.
AudioBuffer read_wav(const std::string& path);
void write_wav(const std::string& path, const AudioBuffer& audio);

// Pads or clips to `target_duration` seconds, split equally between the two
// sides; an odd remainder goes to the right side.
AudioBuffer standardize_segment(const AudioBuffer& audio,
                                double target_duration = 2.0);

struct MelConfig {
  double low_freq = 0.0;
  double high_freq = 8000.0;
  double log_floor = 1e-10;
  bool normalize = false;  // per-utterance mean/variance, off by default
};

// Precomputed Hann window, FFT twiddles and triangular Mel weights.
class LogMelExtractor {
 public:
  explicit LogMelExtractor(MelConfig cfg = MelConfig());

  // audio (>= 400 samples) -> [T, 40] with T = 1 + floor((n - 400) / 160).
  Tensor compute(const AudioBuffer& audio) const;

  // Center frequency of each triangular filter, for diagnostics and tests.
  const std::vector<double>& center_freqs() const { return centers_; }

  static int64_t num_frames(int64_t num_samples) {
    return num_samples < kFrameLength
               ? 0
               : 1 + (num_samples - kFrameLength) / kFrameShift;
  }

 private:
  MelConfig cfg_;
  std::vector<double> window_;
  std::vector<double> centers_;
  // filter -> list of (fft_bin, weight)
  std::vector<std::vector<std::pair<int, double>>> filters_;
};

}  // namespace kws

#endif  // KWS_FRONTEND_HPP_
