// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#include "kws/frontend.hpp"

#include <cmath>
#include <complex>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "kws/common.hpp"

namespace kws {

namespace {

uint32_t read_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) |
         (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t read_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::string& s, uint32_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
  s.push_back(static_cast<char>((v >> 16) & 0xff));
  s.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u16(std::string& s, uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}

// In-place iterative radix-2 FFT; n must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& a) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * M_PI / static_cast<double>(len);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

}  // namespace

AudioBuffer read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check_data(in.good(), "cannot open wav file: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  check_data(buf.size() >= 44, "wav too short to hold a RIFF header: " + path);
  check_data(std::memcmp(buf.data(), "RIFF", 4) == 0 &&
                 std::memcmp(buf.data() + 8, "WAVE", 4) == 0,
             "not a RIFF/WAVE file: " + path);

  size_t pos = 12;
  bool have_fmt = false;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  const unsigned char* data_ptr = nullptr;
  uint32_t data_len = 0;
  while (pos + 8 <= buf.size()) {
    const unsigned char* hdr = buf.data() + pos;
    uint32_t chunk_len = read_u32(hdr + 4);
    const unsigned char* body = hdr + 8;
    if (pos + 8 + chunk_len > buf.size())
      chunk_len = static_cast<uint32_t>(buf.size() - pos - 8);
    if (std::memcmp(hdr, "fmt ", 4) == 0 && chunk_len >= 16) {
      format = read_u16(body);
      channels = read_u16(body + 2);
      rate = read_u32(body + 4);
      bits = read_u16(body + 14);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data_ptr = body;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);
  }
  check_data(have_fmt && data_ptr, "wav missing fmt/data chunk: " + path);
  check_data(format == 1, "unsupported wav encoding " + std::to_string(format) +
                              " (expected PCM=1): " + path);
  check_data(channels == 1, "unsupported channel count " +
                                std::to_string(channels) +
                                " (expected mono): " + path);
  check_data(bits == 16, "unsupported bit depth " + std::to_string(bits) +
                             " (expected 16): " + path);
  check_data(rate == kSampleRate,
             "unsupported sample rate " + std::to_string(rate) +
                 " (expected 16000): " + path);

  AudioBuffer audio;
  audio.sample_rate = static_cast<int>(rate);
  const size_t n = data_len / 2;
  audio.samples.resize(n);
  for (size_t i = 0; i < n; ++i) {
    int16_t s = static_cast<int16_t>(data_ptr[2 * i] | (data_ptr[2 * i + 1] << 8));
    audio.samples[i] = static_cast<double>(s) / 32768.0;
  }
  return audio;
}

void write_wav(const std::string& path, const AudioBuffer& audio) {
  std::string out;
  const uint32_t n = static_cast<uint32_t>(audio.samples.size());
  out.reserve(44 + 2 * n);
  out += "RIFF";
  put_u32(out, 36 + 2 * n);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<uint32_t>(audio.sample_rate));
  put_u32(out, static_cast<uint32_t>(audio.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, 2 * n);
  for (uint32_t i = 0; i < n; ++i) {
    double v = audio.samples[i];
    v = std::max(-1.0, std::min(1.0, v));
    int16_t s = static_cast<int16_t>(std::lrint(v * 32767.0));
    put_u16(out, static_cast<uint16_t>(s));
  }
  std::ofstream f(path, std::ios::binary);
  check_data(f.good(), "cannot write wav file: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

AudioBuffer standardize_segment(const AudioBuffer& audio,
                                double target_duration) {
  check_data(!audio.samples.empty(), "empty segment");
  check_data(audio.sample_rate == kSampleRate,
             "unsupported sample rate " + std::to_string(audio.sample_rate) +
                 " (expected 16000)");
  const int64_t target =
      static_cast<int64_t>(std::llround(target_duration * kSampleRate));
  const int64_t n = static_cast<int64_t>(audio.samples.size());
  AudioBuffer out;
  out.sample_rate = audio.sample_rate;
  if (n == target) {
    out.samples = audio.samples;
    return out;
  }
  if (n < target) {
    int64_t missing = target - n;
    int64_t left = missing / 2;  // odd remainder pads the right
    out.samples.assign(static_cast<size_t>(target), 0.0);
    std::copy(audio.samples.begin(), audio.samples.end(),
              out.samples.begin() + left);
    return out;
  }
  int64_t excess = n - target;
  int64_t left = excess / 2;  // odd remainder clips the right
  out.samples.assign(audio.samples.begin() + left,
                     audio.samples.begin() + left + target);
  return out;
}

LogMelExtractor::LogMelExtractor(MelConfig cfg) : cfg_(cfg) {
  window_.resize(kFrameLength);
  for (int i = 0; i < kFrameLength; ++i)
    window_[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / kFrameLength);

  // Triangular filters spaced uniformly on the Mel scale over the FFT bins.
  const int bins = kFftSize / 2 + 1;
  const double mel_lo = hz_to_mel(cfg_.low_freq);
  const double mel_hi = hz_to_mel(cfg_.high_freq);
  std::vector<double> edges(kNumMels + 2);
  for (int i = 0; i < kNumMels + 2; ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (kNumMels + 1));
  centers_.assign(edges.begin() + 1, edges.end() - 1);
  filters_.resize(kNumMels);
  for (int m = 0; m < kNumMels; ++m) {
    double lo = edges[m], c = edges[m + 1], hi = edges[m + 2];
    for (int b = 0; b < bins; ++b) {
      double f = static_cast<double>(b) * kSampleRate / kFftSize;
      double w = 0.0;
      if (f > lo && f < c) {
        w = (f - lo) / (c - lo);
      } else if (f >= c && f < hi) {
        w = (hi - f) / (hi - c);
      }
      if (w > 0.0) filters_[m].emplace_back(b, w);
    }
  }
}

Tensor LogMelExtractor::compute(const AudioBuffer& audio) const {
  check_data(audio.sample_rate == kSampleRate,
             "unsupported sample rate " + std::to_string(audio.sample_rate) +
                 " (expected 16000)");
  const int64_t n = static_cast<int64_t>(audio.samples.size());
  check_data(n >= kFrameLength, "segment too short");
  const int64_t frames = num_frames(n);
  Tensor out({frames, kNumMels});

  std::vector<std::complex<double>> spec(kFftSize);
  std::vector<double> power(kFftSize / 2 + 1);
  for (int64_t t = 0; t < frames; ++t) {
    const double* s = audio.samples.data() + t * kFrameShift;
    for (int i = 0; i < kFrameLength; ++i)
      spec[i] = std::complex<double>(s[i] * window_[i], 0.0);
    for (int i = kFrameLength; i < kFftSize; ++i) spec[i] = 0.0;
    fft_radix2(spec);
    for (int b = 0; b <= kFftSize / 2; ++b) power[b] = std::norm(spec[b]);
    for (int m = 0; m < kNumMels; ++m) {
      double e = 0.0;
      for (const auto& [b, w] : filters_[m]) e += w * power[b];
      out.at2(t, m) = std::log(std::max(e, cfg_.log_floor));
    }
  }

  if (cfg_.normalize) {
    for (int m = 0; m < kNumMels; ++m) {
      double mean = 0.0;
      for (int64_t t = 0; t < frames; ++t) mean += out.at2(t, m);
      mean /= static_cast<double>(frames);
      double var = 0.0;
      for (int64_t t = 0; t < frames; ++t) {
        double d = out.at2(t, m) - mean;
        var += d * d;
      }
      var /= static_cast<double>(frames);
      double inv = 1.0 / std::sqrt(var + 1e-8);
      for (int64_t t = 0; t < frames; ++t)
        out.at2(t, m) = (out.at2(t, m) - mean) * inv;
    }
  }
  return out;
}

}  // namespace kws
