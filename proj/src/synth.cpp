// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#include "kws/synth.hpp"

#include "kws/common.hpp"

#include <cmath>
#include <filesystem>
#include <set>

namespace kws {

namespace {

// Irregular spacing: no ratio between two tones equals a speaker shift.
const double kToneHz[8] = {220.0, 290.0, 400.0, 520.0,
                           710.0, 980.0, 1300.0, 1800.0};
const double kSpeakerShift[5] = {0.82, 0.90, 1.00, 1.10, 1.22};

// Four-tone melodies whose consecutive interval pairs are globally unique,
// so negative streams can avoid every keyword's local interval structure.
const int kPatterns[18][4] = {
    {7, 3, 2, 7}, {2, 1, 7, 4}, {7, 2, 0, 1}, {0, 7, 5, 7}, {4, 7, 0, 1},
    {7, 4, 6, 1}, {6, 1, 4, 6}, {6, 1, 3, 4}, {5, 1, 4, 5}, {0, 6, 1, 2},
    {2, 3, 7, 3}, {0, 3, 2, 6}, {7, 4, 0, 5},  // held-out 0-2
    {7, 2, 7, 2}, {3, 2, 3, 6}, {7, 1, 6, 0},  // held-out 3-5
    {0, 4, 3, 6}, {6, 7, 3, 0}};               // unknown
constexpr int kTonesPerWord = 4;

std::string tone_name(int k) { return "t" + std::to_string(k); }

void add_tone(std::vector<double>& samples, int64_t start, int64_t len,
              double freq, double amp, Rng& rng) {
  const int64_t ramp = 160;  // 10 ms attack/decay
  double phase = rng.uniform(0.0, 2.0 * M_PI);
  double vib_phase = rng.uniform(0.0, 2.0 * M_PI);
  double vib_depth = rng.uniform(0.005, 0.02);
  double vib_rate = rng.uniform(3.0, 7.0);
  for (int64_t i = 0; i < len; ++i) {
    int64_t pos = start + i;
    if (pos >= static_cast<int64_t>(samples.size())) break;
    double env = 1.0;
    if (i < ramp) env = static_cast<double>(i) / ramp;
    if (len - i < ramp) env = std::min(env, static_cast<double>(len - i) / ramp);
    double vib = 1.0 + vib_depth * std::sin(2.0 * M_PI * vib_rate * i / kSampleRate + vib_phase);
    double arg = phase + 2.0 * M_PI * freq * vib * i / kSampleRate;
    // harmonic stack, roughly voiced-speech-like spectral spread
    double v = std::sin(arg) + 0.5 * std::sin(2.0 * arg) + 0.3 * std::sin(3.0 * arg) +
               0.15 * std::sin(4.0 * arg);
    samples[static_cast<size_t>(pos)] += amp * env * v / 1.95;
  }
}

void add_noise(std::vector<double>& samples, double amp, Rng& rng) {
  for (double& s : samples) s += amp * rng.normal();
}

struct WordRender {
  std::vector<double> samples;
  std::vector<PhonemeSpan> spans;
};

WordRender render_word(const int* pattern, double shift, Rng& rng,
                       double noise_amp) {
  WordRender out;
  const int64_t lead = static_cast<int64_t>(rng.uniform(0.08, 0.16) * kSampleRate);
  const double amp = rng.uniform(0.3, 0.55);
  const double word_jitter = rng.uniform(0.98, 1.02);
  std::vector<int64_t> lens(kTonesPerWord);
  int64_t total = lead;
  for (int i = 0; i < kTonesPerWord; ++i) {
    lens[static_cast<size_t>(i)] =
        static_cast<int64_t>(rng.uniform(0.22, 0.32) * kSampleRate);
    total += lens[static_cast<size_t>(i)];
  }
  total += static_cast<int64_t>(rng.uniform(0.08, 0.16) * kSampleRate);
  out.samples.assign(static_cast<size_t>(total), 0.0);
  int64_t cursor = lead;
  for (int i = 0; i < kTonesPerWord; ++i) {
    double tone_jitter = rng.uniform(0.99, 1.01);
    double freq = kToneHz[pattern[i]] * shift * word_jitter * tone_jitter;
    add_tone(out.samples, cursor, lens[static_cast<size_t>(i)], freq, amp, rng);
    PhonemeSpan span;
    span.symbol = tone_name(pattern[i]);
    span.start_frame = cursor / kFrameShift;
    span.end_frame = (cursor + lens[static_cast<size_t>(i)]) / kFrameShift;
    if (span.end_frame > span.start_frame) out.spans.push_back(span);
    cursor += lens[static_cast<size_t>(i)];
  }
  add_noise(out.samples, noise_amp * rng.uniform(0.6, 1.6), rng);
  return out;
}

}  // namespace

void SynthConfig::validate() const {
  check_config(train_words >= 2 && train_words <= 10,
               "synth.train_words must be in [2,10]");
  check_config(heldout_words >= 1 && heldout_words <= 6,
               "synth.heldout_words must be in [1,6]");
  check_config(speakers >= 1 && speakers <= 5, "synth.speakers must be in [1,5]");
  check_config(unknown_words >= 0 && unknown_words <= 2,
               "synth.unknown_words must be in [0,2]");
  check_config(train_per_cell >= 1 && dev_per_cell >= 0 && eval_per_cell >= 2,
               "synth per-cell counts invalid");
  check_config(negative_streams >= 0 && negative_stream_seconds >= 4.0,
               "synth negative stream settings invalid");
}

SynthCorpus generate_synthetic_corpus(const SynthConfig& cfg,
                                      const std::string& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(out_dir) / "wav");

  SynthCorpus corpus;
  auto emit = [&](const std::string& rel, const std::vector<double>& samples,
                  ManifestRecord rec) {
    AudioBuffer buf;
    buf.samples = samples;
    write_wav((fs::path(out_dir) / rel).string(), buf);
    rec.audio_path = rel;
    corpus.records.push_back(std::move(rec));
  };

  auto cell_rng = [&](const std::string& name) {
    return Rng(mix_seed(cfg.seed, name));
  };

  // word segments: train/dev for the training vocabulary, eval-positive for
  // held-out words
  struct Plan {
    int pattern;
    std::string word;
    std::string split;
    int per_cell;
  };
  std::vector<Plan> plans;
  for (int w = 0; w < cfg.train_words; ++w) {
    std::string name = "word_" + std::to_string(w);
    plans.push_back({w, name, "train", cfg.train_per_cell});
    if (cfg.dev_per_cell > 0) plans.push_back({w, name, "dev", cfg.dev_per_cell});
  }
  for (int w = 0; w < cfg.heldout_words; ++w)
    plans.push_back({10 + w, "held_" + std::to_string(w), "eval-positive",
                     cfg.eval_per_cell});

  for (const auto& plan : plans) {
    for (int spk = 0; spk < cfg.speakers; ++spk) {
      for (int i = 0; i < plan.per_cell; ++i) {
        std::string rel = "wav/" + plan.word + "_s" + std::to_string(spk) +
                          "_" + plan.split + "_" + std::to_string(i) + ".wav";
        Rng rng = cell_rng(rel);
        WordRender r = render_word(kPatterns[plan.pattern],
                                   kSpeakerShift[spk], rng, cfg.noise_amp);
        ManifestRecord rec;
        rec.word = plan.word;
        rec.speaker_id = "spk_" + std::to_string(spk);
        rec.phonemes = r.spans;
        rec.split = plan.split;
        emit(rel, r.samples, rec);
      }
    }
  }

  // out-of-vocabulary words, few enough to fall below the frequency cutoff
  for (int w = 0; w < cfg.unknown_words; ++w) {
    for (int i = 0; i < cfg.unknown_examples; ++i) {
      int spk = i % cfg.speakers;
      std::string rel = "wav/rare_" + std::to_string(w) + "_" +
                        std::to_string(i) + ".wav";
      Rng rng = cell_rng(rel);
      WordRender r = render_word(kPatterns[13 + w], kSpeakerShift[spk], rng,
                                 cfg.noise_amp);
      ManifestRecord rec;
      rec.word = "rare_" + std::to_string(w);
      rec.speaker_id = "spk_" + std::to_string(spk);
      rec.phonemes = r.spans;
      rec.split = "train";
      emit(rel, r.samples, rec);
    }
  }

  // silence segments
  for (int i = 0; i < cfg.silence_examples; ++i) {
    std::string rel = "wav/silence_" + std::to_string(i) + ".wav";
    Rng rng = cell_rng(rel);
    std::vector<double> samples(
        static_cast<size_t>(rng.uniform(0.8, 1.4) * kSampleRate), 0.0);
    add_noise(samples, cfg.noise_amp, rng);
    ManifestRecord rec;
    rec.word = kSilenceWord;
    rec.speaker_id = "spk_" + std::to_string(i % cfg.speakers);
    rec.split = "train";
    emit(rel, samples, rec);
  }

  // negative streams: random tone sequences that never spell any word's
  // interval signature, plus noise-only stretches
  std::set<std::pair<int, int>> forbidden;
  for (const auto& p : kPatterns)
    for (int i = 0; i + 2 < kTonesPerWord; ++i)
      forbidden.insert({p[i + 1] - p[i], p[i + 2] - p[i + 1]});
  for (int s = 0; s < cfg.negative_streams; ++s) {
    std::string rel = "wav/negative_" + std::to_string(s) + ".wav";
    Rng rng = cell_rng(rel);
    const int64_t len =
        static_cast<int64_t>(cfg.negative_stream_seconds * kSampleRate);
    std::vector<double> samples(static_cast<size_t>(len), 0.0);
    int64_t cursor = static_cast<int64_t>(rng.uniform(0.2, 1.0) * kSampleRate);
    int prev = -1, prev_delta = -100;
    // one pitch shift per utterance-like run, like a speaker holding a pitch
    double shift = rng.uniform(0.65, 1.45);
    while (cursor < len - kSampleRate / 2) {
      if (rng.uniform() < 0.25) {  // utterance boundary: gap, new pitch
        cursor += static_cast<int64_t>(rng.uniform(0.4, 1.2) * kSampleRate);
        shift = rng.uniform(0.65, 1.45);
        prev = -1;
        prev_delta = -100;
        continue;
      }
      int tone = static_cast<int>(rng.uniform_int(8));
      if (prev >= 0) {
        int delta = tone - prev;
        // avoid completing a known two-interval signature
        int guard = 0;
        while (forbidden.count({prev_delta, delta}) && guard++ < 16) {
          tone = static_cast<int>(rng.uniform_int(8));
          delta = tone - prev;
        }
        prev_delta = delta;
      }
      int64_t tlen = static_cast<int64_t>(rng.uniform(0.2, 0.36) * kSampleRate);
      add_tone(samples, cursor, tlen, kToneHz[tone] * shift,
               rng.uniform(0.3, 0.55), rng);
      prev = tone;
      cursor += tlen + static_cast<int64_t>(rng.uniform(0.0, 0.25) * kSampleRate);
    }
    add_noise(samples, cfg.noise_amp, rng);
    ManifestRecord rec;
    rec.word = "<negative>";
    rec.speaker_id = "";
    rec.split = "eval-negative";
    emit(rel, samples, rec);
    corpus.negative_hours += cfg.negative_stream_seconds / 3600.0;
  }

  return corpus;
}

}  // namespace kws
