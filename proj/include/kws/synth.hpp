// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0
//
// Built-in synthetic corpus: tone-pattern "words" spoken by pitch-shifted
// "speakers". Each word is a fixed three-tone melody; the tone inventory is
// irregularly spaced so a pitch shift never maps one tone onto another, and
// the melodies have pairwise distinct interval signatures so no word is a
// shifted copy of another. Phoneme labels are the tone identities.

#ifndef KWS_SYNTH_HPP_
#define KWS_SYNTH_HPP_

#include <string>
#include <vector>

#include "kws/data.hpp"

namespace kws {

struct SynthConfig {
  uint64_t seed = 1234;
  int train_words = 10;
  int heldout_words = 6;
  int speakers = 5;
  int train_per_cell = 20;  // examples per (word, speaker)
  int dev_per_cell = 3;
  int eval_per_cell = 8;  // held-out words
  int unknown_words = 2;  // below the frequency cutoff -> Unknown
  int unknown_examples = 8;
  int silence_examples = 20;
  int negative_streams = 90;
  double negative_stream_seconds = 80.0;
  double noise_amp = 0.012;

  void validate() const;
};

struct SynthCorpus {
  std::vector<ManifestRecord> records;
  double negative_hours = 0.0;
};

// Writes wav files under <out_dir>/wav/ and returns the manifest records.
// Fully deterministic: every file is derived from (seed, relative path).
SynthCorpus generate_synthetic_corpus(const SynthConfig& cfg,
                                      const std::string& out_dir);

}  // namespace kws

#endif  // KWS_SYNTH_HPP_
