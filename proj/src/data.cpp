// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#include "kws/data.hpp"

#include <algorithm>

#include "kws/common.hpp"
#include <fstream>
#include <iostream>

namespace kws {

nlohmann::json ManifestRecord::to_json() const {
  nlohmann::json spans = nlohmann::json::array();
  for (const auto& s : phonemes)
    spans.push_back({s.symbol, s.start_frame, s.end_frame});
  return nlohmann::json{{"audio_path", audio_path},
                        {"word", word},
                        {"speaker_id", speaker_id},
                        {"phonemes", spans},
                        {"split", split}};
}

ManifestRecord ManifestRecord::from_json(const nlohmann::json& j) {
  ManifestRecord r;
  try {
    r.audio_path = j.at("audio_path").get<std::string>();
    r.word = j.at("word").get<std::string>();
    r.speaker_id = j.at("speaker_id").get<std::string>();
    r.split = j.at("split").get<std::string>();
    if (j.contains("phonemes")) {
      for (const auto& s : j.at("phonemes")) {
        PhonemeSpan span;
        span.symbol = s.at(0).get<std::string>();
        span.start_frame = s.at(1).get<int64_t>();
        span.end_frame = s.at(2).get<int64_t>();
        r.phonemes.push_back(std::move(span));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed manifest record: ") + e.what());
  }
  if (r.split != "train" && r.split != "dev" && r.split != "eval-positive" &&
      r.split != "eval-negative")
    throw DataError("manifest record has unknown split '" + r.split + "'");
  return r;
}

std::vector<ManifestRecord> read_manifest(const std::string& path) {
  std::ifstream in(path);
  check_data(in.good(), "cannot open manifest: " + path);
  std::vector<ManifestRecord> out;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": invalid JSON: " + e.what());
    }
    try {
      out.push_back(ManifestRecord::from_json(j));
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_manifest(const std::string& path,
                    const std::vector<ManifestRecord>& records) {
  std::ofstream out(path);
  check_data(out.good(), "cannot write manifest: " + path);
  for (const auto& r : records) out << r.to_json().dump() << "\n";
}

int64_t Vocabulary::word_id(const std::string& w) const {
  if (w == kSilenceWord) return silence_id;
  auto it = std::lower_bound(sorted_words_.begin(), sorted_words_.end(),
                             std::make_pair(w, int64_t{0}));
  if (it != sorted_words_.end() && it->first == w) return it->second;
  return unknown_id;
}

int64_t Vocabulary::speaker_id(const std::string& s) const {
  auto it = std::find(speakers.begin(), speakers.end(), s);
  return it == speakers.end() ? -1 : it - speakers.begin();
}

int64_t Vocabulary::phoneme_id(const std::string& p) const {
  auto it = std::find(phonemes.begin(), phonemes.end(), p);
  return it == phonemes.end() ? -1 : it - phonemes.begin();
}

nlohmann::json Vocabulary::to_json() const {
  return nlohmann::json{{"version", 1},
                        {"words", words},
                        {"speakers", speakers},
                        {"phonemes", phonemes}};
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  Vocabulary v;
  check_data(j.value("version", 0) == 1, "unsupported vocabulary version");
  v.words = j.at("words").get<std::vector<std::string>>();
  v.speakers = j.at("speakers").get<std::vector<std::string>>();
  v.phonemes = j.at("phonemes").get<std::vector<std::string>>();
  v.finalize();
  return v;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path);
  check_data(out.good(), "cannot write vocabulary: " + path);
  out << to_json().dump(2) << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  check_data(in.good(), "cannot open vocabulary: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid vocabulary json: " + std::string(e.what()));
  }
  return from_json(j);
}

void Vocabulary::finalize() {
  silence_id = static_cast<int64_t>(words.size());
  unknown_id = silence_id + 1;
  sorted_words_.clear();
  for (size_t i = 0; i < words.size(); ++i)
    sorted_words_.emplace_back(words[i], static_cast<int64_t>(i));
  std::sort(sorted_words_.begin(), sorted_words_.end());
  auto sil = std::find(phonemes.begin(), phonemes.end(), kSilencePhoneme);
  check_data(sil != phonemes.end(), "vocabulary lacks the silence phoneme");
  silence_phoneme_id = sil - phonemes.begin();
}

Vocabulary build_vocabulary(const std::vector<ManifestRecord>& records,
                            int64_t top_k) {
  std::map<std::string, int64_t> counts;
  std::vector<std::string> speakers, phones;
  int64_t train_records = 0;
  for (const auto& r : records) {
    if (r.split != "train") continue;
    ++train_records;
    if (r.word != kSilenceWord) ++counts[r.word];
    if (!r.speaker_id.empty()) speakers.push_back(r.speaker_id);
    for (const auto& s : r.phonemes) phones.push_back(s.symbol);
  }
  check_data(train_records > 0, "training split is empty");

  std::vector<std::pair<std::string, int64_t>> ranked(counts.begin(),
                                                      counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;  // boundary ties: lexicographically smaller wins
  });
  Vocabulary v;
  if (static_cast<int64_t>(ranked.size()) < top_k) {
    std::cerr << "[data] warning: only " << ranked.size()
              << " distinct words; vocabulary shrinks to " << ranked.size() + 2
              << " classes\n";
  }
  for (size_t i = 0; i < ranked.size() && static_cast<int64_t>(i) < top_k; ++i)
    v.words.push_back(ranked[i].first);

  std::sort(speakers.begin(), speakers.end());
  speakers.erase(std::unique(speakers.begin(), speakers.end()), speakers.end());
  v.speakers = std::move(speakers);

  phones.push_back(kSilencePhoneme);
  std::sort(phones.begin(), phones.end());
  phones.erase(std::unique(phones.begin(), phones.end()), phones.end());
  v.phonemes = std::move(phones);
  v.finalize();
  return v;
}

SegmentLoader::SegmentLoader(Vocabulary vocab, std::string root_dir,
                             MelConfig mel)
    : vocab_(std::move(vocab)), root_(std::move(root_dir)), fe_(mel) {}

std::string SegmentLoader::resolve(const std::string& rel_path) const {
  if (rel_path.empty()) throw DataError("record with empty audio_path");
  if (rel_path.front() == '/' || root_.empty()) return rel_path;
  return root_ + "/" + rel_path;
}

TrainingExample SegmentLoader::load(const ManifestRecord& record) const {
  AudioBuffer raw = read_wav(resolve(record.audio_path));
  const int64_t n = static_cast<int64_t>(raw.samples.size());
  check_data(n > 0, "empty segment: " + record.audio_path);

  // validate spans against the raw segment
  const int64_t raw_frames = (n + kFrameShift - 1) / kFrameShift;
  int64_t prev_end = 0;
  for (const auto& s : record.phonemes) {
    if (s.start_frame < prev_end || s.end_frame <= s.start_frame ||
        s.end_frame > raw_frames)
      throw DataError("malformed phoneme spans in " + record.audio_path);
    prev_end = s.end_frame;
  }

  AudioBuffer std_audio = standardize_segment(raw);
  TrainingExample ex;
  ex.id = record.audio_path;
  ex.features = fe_.compute(std_audio);
  ex.y_word = vocab_.word_id(record.word);
  ex.y_speaker = vocab_.speaker_id(record.speaker_id);

  // offset between standardized and raw sample coordinates
  const int64_t shift = n <= kSegmentSamples ? (kSegmentSamples - n) / 2
                                             : -((n - kSegmentSamples) / 2);
  const int64_t frames = ex.features.dim(0);
  ex.y_phoneme.assign(static_cast<size_t>(frames), vocab_.silence_phoneme_id);
  for (int64_t f = 0; f < frames; ++f) {
    // window center mapped back into raw sample coordinates
    const int64_t center = f * kFrameShift + kFrameLength / 2 - shift;
    if (center < 0 || center >= n) continue;
    for (const auto& s : record.phonemes) {
      if (center >= s.start_frame * kFrameShift &&
          center < s.end_frame * kFrameShift) {
        int64_t pid = vocab_.phoneme_id(s.symbol);
        if (pid >= 0) ex.y_phoneme[static_cast<size_t>(f)] = pid;
        break;
      }
    }
  }
  return ex;
}

LoadedDataset load_split(const SegmentLoader& loader,
                         const std::vector<ManifestRecord>& records,
                         const std::string& split) {
  LoadedDataset out;
  for (const auto& r : records) {
    if (r.split != split) continue;
    try {
      out.examples.push_back(loader.load(r));
    } catch (const DataError& e) {
      std::cerr << "[data] skipping " << r.audio_path << ": " << e.what()
                << "\n";
      out.skipped.push_back(r.audio_path);
    }
  }
  return out;
}

std::vector<std::vector<int64_t>> make_batches(int64_t count,
                                               int64_t batch_size,
                                               uint64_t seed) {
  check_config(batch_size >= 1, "batch_size must be >= 1");
  std::vector<int64_t> order(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) order[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<int64_t>> batches;
  for (int64_t lo = 0; lo < count; lo += batch_size) {
    int64_t hi = std::min(count, lo + batch_size);
    batches.emplace_back(order.begin() + lo, order.begin() + hi);
  }
  return batches;
}

}  // namespace kws
