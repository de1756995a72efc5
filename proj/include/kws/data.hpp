// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0
//
// Manifest ingestion, vocabulary construction and example loading.
//
// Manifest schema (version 1): one JSON object per line, UTF-8.
//   audio_path  string, wav path relative to the manifest's directory
//   word        string; "<silence>" marks a non-speech segment
//   speaker_id  string
//   phonemes    array of [symbol, start_frame, end_frame), 10 ms frames
//               relative to the raw (unstandardized) segment; ordered,
//               non-overlapping, within segment bounds
//   split       train | dev | eval-positive | eval-negative

#ifndef KWS_DATA_HPP_
#define KWS_DATA_HPP_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kws/frontend.hpp"

namespace kws {

inline constexpr const char* kSilenceWord = "<silence>";
inline constexpr const char* kSilencePhoneme = "sil";

struct PhonemeSpan {
  std::string symbol;
  int64_t start_frame = 0;
  int64_t end_frame = 0;  // exclusive
};

struct ManifestRecord {
  std::string audio_path;
  std::string word;
  std::string speaker_id;
  std::vector<PhonemeSpan> phonemes;
  std::string split;

  nlohmann::json to_json() const;
  static ManifestRecord from_json(const nlohmann::json& j);
};

std::vector<ManifestRecord> read_manifest(const std::string& path);
void write_manifest(const std::string& path,
                    const std::vector<ManifestRecord>& records);

// Word/speaker/phoneme id maps. Word ids are dense from 0 in frequency order
// (ties broken lexicographically), followed by Silence then Unknown.
struct Vocabulary {
  std::vector<std::string> words;  // regular words only, id = index
  int64_t silence_id = 0;
  int64_t unknown_id = 0;
  std::vector<std::string> speakers;
  std::vector<std::string> phonemes;  // includes "sil"
  int64_t silence_phoneme_id = 0;

  int64_t size() const { return static_cast<int64_t>(words.size()) + 2; }
  int64_t word_id(const std::string& w) const;
  int64_t speaker_id(const std::string& s) const;  // -1 when unknown
  int64_t phoneme_id(const std::string& p) const;  // -1 when unknown

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  // Rebuilds the lookup index and special ids after `words`/`phonemes` edits.
  void finalize();

 private:
  std::vector<std::pair<std::string, int64_t>> sorted_words_;
};

// Top `top_k` words by train-split segment count become classes; boundary
// ties go to the lexicographically smaller word. With fewer distinct words
// the vocabulary shrinks to what is available (plus Silence and Unknown).
Vocabulary build_vocabulary(const std::vector<ManifestRecord>& records,
                            int64_t top_k = 1000);

struct TrainingExample {
  Tensor features;  // [T, 40] standardized 2 s segment
  int64_t y_word = 0;
  int64_t y_speaker = -1;
  std::vector<int64_t> y_phoneme;  // one label per feature frame
  std::string id;
};

class SegmentLoader {
 public:
  SegmentLoader(Vocabulary vocab, std::string root_dir,
                MelConfig mel = MelConfig());

  // standardize -> log-Mel -> labels; phoneme spans are shifted by the
  // padding/clipping offset and frames outside any span carry the silence
  // phoneme. Throws DataError on unreadable audio or malformed spans.
  TrainingExample load(const ManifestRecord& record) const;

  const Vocabulary& vocab() const { return vocab_; }
  const LogMelExtractor& extractor() const { return fe_; }
  std::string resolve(const std::string& rel_path) const;

 private:
  Vocabulary vocab_;
  std::string root_;
  LogMelExtractor fe_;
};

struct LoadedDataset {
  std::vector<TrainingExample> examples;
  std::vector<std::string> skipped;  // record ids that failed to load
};

// Loads every record of the given split; failures are skipped with a logged
// diagnostic so counts always reconcile: examples + skipped == records.
LoadedDataset load_split(const SegmentLoader& loader,
                         const std::vector<ManifestRecord>& records,
                         const std::string& split);

// Deterministic shuffled batch index lists; the final partial batch is kept.
std::vector<std::vector<int64_t>> make_batches(int64_t count,
                                               int64_t batch_size,
                                               uint64_t seed);

}  // namespace kws

#endif  // KWS_DATA_HPP_
