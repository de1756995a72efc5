// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#include "kws/evaluation.hpp"

#include <algorithm>

#include "kws/training.hpp"
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

namespace kws {

EnrollmentSet enroll(const std::vector<AudioBuffer>& utterances,
                     EmbeddingModel& model, const LogMelExtractor& fe,
                     const std::string& keyword, int expected_count) {
  check_data(static_cast<int>(utterances.size()) >= expected_count,
             "enrollment needs " + std::to_string(expected_count) +
                 " utterances, got " + std::to_string(utterances.size()));
  EnrollmentSet set;
  set.keyword = keyword;
  for (int i = 0; i < expected_count; ++i) {
    AudioBuffer std_audio = standardize_segment(utterances[static_cast<size_t>(i)]);
    set.embeddings.push_back(model.embed_single(fe.compute(std_audio)));
  }
  return set;
}

double cosine_distance(const Tensor& a, const Tensor& b) {
  check_numeric(a.numel() == b.numel(), "cosine dimensionality mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  check_numeric(na > 1e-24 && nb > 1e-24, "zero-norm vector in cosine distance");
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

double score_query(const Tensor& query_embedding,
                   const EnrollmentSet& enrollment) {
  check_numeric(!enrollment.embeddings.empty(), "empty enrollment set");
  double best = std::numeric_limits<double>::infinity();
  for (const Tensor& e : enrollment.embeddings)
    best = std::min(best, cosine_distance(query_embedding, e));
  return best;
}

std::vector<WindowScore> sliding_detect(const AudioBuffer& stream,
                                        const EnrollmentSet& enrollment,
                                        EmbeddingModel& model,
                                        const LogMelExtractor& fe,
                                        double hop_s) {
  std::vector<WindowScore> out;
  if (static_cast<int64_t>(stream.samples.size()) < kSegmentSamples) {
    std::cerr << "[eval] warning: stream shorter than the 2 s window\n";
    return out;
  }
  const int64_t hop_frames = std::max<int64_t>(
      1, static_cast<int64_t>(std::llround(hop_s * 100.0)));
  Tensor feats = fe.compute(stream);
  const int64_t total = feats.dim(0);
  for (int64_t start = 0; start + kSegmentFrames <= total; start += hop_frames) {
    Tensor window({kSegmentFrames, kNumMels});
    for (int64_t f = 0; f < kSegmentFrames; ++f)
      for (int64_t m = 0; m < kNumMels; ++m)
        window.at2(f, m) = feats.at2(start + f, m);
    Tensor emb = model.embed_single(window);
    WindowScore ws;
    ws.time_s = static_cast<double>(start) / 100.0;
    ws.distance = score_query(emb, enrollment);
    out.push_back(ws);
  }
  return out;
}

namespace {

// FRR over sorted positives at a given threshold (fires when score <= thr).
double frr_at(const std::vector<double>& sorted_pos, double thr) {
  auto it = std::upper_bound(sorted_pos.begin(), sorted_pos.end(), thr);
  int64_t fired = it - sorted_pos.begin();
  return 1.0 - static_cast<double>(fired) /
                   static_cast<double>(sorted_pos.size());
}

}  // namespace

DETCurve det_curve(const std::vector<double>& positive_scores,
                   const std::vector<double>& negative_scores,
                   double negative_hours) {
  check_data(!positive_scores.empty() && !negative_scores.empty(),
             "det_curve requires non-empty score lists");
  check_data(negative_hours > 0.0, "det_curve requires negative_hours > 0");
  std::vector<double> pos = positive_scores;
  std::vector<double> neg = negative_scores;
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());
  std::vector<double> thresholds;
  thresholds.reserve(pos.size() + neg.size());
  std::merge(pos.begin(), pos.end(), neg.begin(), neg.end(),
             std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()),
                   thresholds.end());

  DETCurve curve;
  curve.negative_hours = negative_hours;
  curve.deduplicated = false;
  // detector-off point: nothing fires
  curve.points.push_back({thresholds.front() - 1.0, 0.0, 1.0});
  size_t ni = 0;
  for (double thr : thresholds) {
    while (ni < neg.size() && neg[ni] <= thr) ++ni;
    DetPoint p;
    p.threshold = thr;
    p.fa_per_hour = static_cast<double>(ni) / negative_hours;
    p.frr = frr_at(pos, thr);
    curve.points.push_back(p);
  }
  return curve;
}

int64_t lockout_events(const std::vector<double>& times, double lockout_s) {
  int64_t events = 0;
  double until = -std::numeric_limits<double>::infinity();
  for (double t : times) {
    if (t >= until) {
      ++events;
      until = t + lockout_s;
    }
  }
  return events;
}

DETCurve det_curve_events(const std::vector<double>& positive_scores,
                          std::vector<NegativeWindow> negative_windows,
                          double negative_hours, double lockout_s) {
  check_data(!positive_scores.empty() && !negative_windows.empty(),
             "det_curve requires non-empty score lists");
  check_data(negative_hours > 0.0, "det_curve requires negative_hours > 0");
  std::vector<double> pos = positive_scores;
  std::sort(pos.begin(), pos.end());

  // windows grouped per stream in time order
  std::stable_sort(negative_windows.begin(), negative_windows.end(),
                   [](const NegativeWindow& a, const NegativeWindow& b) {
                     if (a.stream != b.stream) return a.stream < b.stream;
                     return a.time < b.time;
                   });
  std::vector<std::pair<size_t, size_t>> stream_ranges;  // [lo, hi)
  for (size_t i = 0; i < negative_windows.size();) {
    size_t j = i;
    while (j < negative_windows.size() &&
           negative_windows[j].stream == negative_windows[i].stream)
      ++j;
    stream_ranges.emplace_back(i, j);
    i = j;
  }

  // thresholds: all distinct scores; per-stream event counts are rescanned
  // only when the threshold crosses one of that stream's scores
  struct ThresholdHit {
    double score;
    int32_t stream_idx;  // -1 for positive-only scores
  };
  std::vector<ThresholdHit> hits;
  hits.reserve(pos.size() + negative_windows.size());
  for (double p : pos) hits.push_back({p, -1});
  for (size_t s = 0; s < stream_ranges.size(); ++s)
    for (size_t i = stream_ranges[s].first; i < stream_ranges[s].second; ++i)
      hits.push_back({negative_windows[i].score, static_cast<int32_t>(s)});
  std::sort(hits.begin(), hits.end(),
            [](const ThresholdHit& a, const ThresholdHit& b) {
              return a.score < b.score;
            });

  std::vector<int64_t> stream_events(stream_ranges.size(), 0);
  int64_t total_events = 0;
  auto rescan = [&](int32_t s, double thr) {
    std::vector<double> fired;
    for (size_t i = stream_ranges[static_cast<size_t>(s)].first;
         i < stream_ranges[static_cast<size_t>(s)].second; ++i)
      if (negative_windows[i].score <= thr)
        fired.push_back(negative_windows[i].time);
    int64_t ev = lockout_events(fired, lockout_s);
    total_events += ev - stream_events[static_cast<size_t>(s)];
    stream_events[static_cast<size_t>(s)] = ev;
  };

  DETCurve curve;
  curve.negative_hours = negative_hours;
  curve.deduplicated = true;
  curve.points.push_back({hits.front().score - 1.0, 0.0, 1.0});
  size_t i = 0;
  while (i < hits.size()) {
    double thr = hits[i].score;
    std::set<int32_t> touched;
    while (i < hits.size() && hits[i].score == thr) {
      if (hits[i].stream_idx >= 0) touched.insert(hits[i].stream_idx);
      ++i;
    }
    for (int32_t s : touched) rescan(s, thr);
    DetPoint p;
    p.threshold = thr;
    p.fa_per_hour = static_cast<double>(total_events) / negative_hours;
    p.frr = frr_at(pos, thr);
    curve.points.push_back(p);
  }
  return curve;
}

double frr_at_fa(const DETCurve& curve, double target_fa) {
  check_data(!curve.points.empty(), "empty DET curve");
  // lower envelope: best (lowest) FRR at each achievable FA rate
  std::map<double, double> envelope;
  for (const auto& p : curve.points) {
    auto it = envelope.find(p.fa_per_hour);
    if (it == envelope.end() || p.frr < it->second)
      envelope[p.fa_per_hour] = p.frr;
  }
  const double lo = envelope.begin()->first;
  const double hi = envelope.rbegin()->first;
  if (target_fa < lo || target_fa > hi)
    throw DataError("target FA rate " + std::to_string(target_fa) +
                    "/hr outside the achievable range [" + std::to_string(lo) +
                    ", " + std::to_string(hi) + "]");
  auto upper = envelope.lower_bound(target_fa);
  if (upper->first == target_fa) return upper->second;
  auto lower = std::prev(upper);
  const double t = (target_fa - lower->first) / (upper->first - lower->first);
  return lower->second + t * (upper->second - lower->second);
}

double speaker_probe_accuracy(const std::vector<Tensor>& train_embeddings,
                              const std::vector<int64_t>& train_speakers,
                              const std::vector<Tensor>& test_embeddings,
                              const std::vector<int64_t>& test_speakers,
                              int64_t num_speakers, uint64_t seed, int steps) {
  check_data(!train_embeddings.empty() && !test_embeddings.empty(),
             "probe needs non-empty splits");
  const int64_t n = static_cast<int64_t>(train_embeddings.size());
  const int64_t d = train_embeddings[0].numel();
  Tensor x({n, d});
  for (int64_t r = 0; r < n; ++r)
    for (int64_t i = 0; i < d; ++i) x.at2(r, i) = train_embeddings[static_cast<size_t>(r)][i];

  Rng rng(seed);
  Tensor w0({num_speakers, d});
  for (int64_t i = 0; i < w0.numel(); ++i) w0[i] = 0.01 * rng.normal();
  ag::Value w = ag::param(w0);
  ag::Value b = ag::param(Tensor::zeros({num_speakers}));
  Adam adam({{"w", w}, {"b", b}});
  ag::Value xin = ag::constant(x);
  for (int s = 0; s < steps; ++s) {
    adam.zero_grad();
    ag::Value logits = ag::linear(xin, w, b);
    ag::Value logp = ag::log_softmax_lastdim(logits);
    ag::Value loss = ag::neg(ag::mean_all(ag::pick_lastdim(logp, train_speakers)));
    ag::backward(loss);
    adam.step(0.05);
  }

  int64_t correct = 0;
  ag::NoGradGuard ng;
  for (size_t r = 0; r < test_embeddings.size(); ++r) {
    const Tensor& e = test_embeddings[r];
    int64_t arg = 0;
    double best = -1e300;
    for (int64_t c = 0; c < num_speakers; ++c) {
      double v = b->val[c];
      for (int64_t i = 0; i < d; ++i) v += w->val.at2(c, i) * e[i];
      if (v > best) {
        best = v;
        arg = c;
      }
    }
    if (arg == test_speakers[r]) ++correct;
  }
  return static_cast<double>(correct) /
         static_cast<double>(test_embeddings.size());
}

EvalOutcome evaluate_qbye(EmbeddingModel& model, const SegmentLoader& loader,
                          const std::vector<ManifestRecord>& records,
                          const EvalConfig& cfg,
                          const std::optional<std::string>& score_dump_path) {
  cfg.validate();
  // keyword -> positive records
  std::map<std::string, std::vector<const ManifestRecord*>> by_word;
  std::vector<const ManifestRecord*> negatives;
  for (const auto& r : records) {
    if (r.split == "eval-positive") by_word[r.word].push_back(&r);
    if (r.split == "eval-negative") negatives.push_back(&r);
  }
  check_data(!by_word.empty(), "no eval-positive records");
  check_data(!negatives.empty(), "no eval-negative records");

  std::ofstream dump;
  if (score_dump_path) {
    dump.open(*score_dump_path);
    check_data(dump.good(), "cannot write score dump: " + *score_dump_path);
  }

  EvalOutcome out;
  std::vector<double> positive_scores;
  std::vector<NegativeWindow> negative_windows;
  struct KeywordData {
    std::string word;
    EnrollmentSet enrollment;
    std::vector<Tensor> positive_embeddings;
  };
  std::vector<KeywordData> keywords;

  for (auto& [word, recs] : by_word) {
    check_data(static_cast<int>(recs.size()) > cfg.enroll_count,
               "keyword '" + word + "' has too few utterances to enroll");
    // seeded enrollment pick, shared across encoders under the same seed
    std::vector<int64_t> order(recs.size());
    for (size_t i = 0; i < recs.size(); ++i) order[i] = static_cast<int64_t>(i);
    Rng rng(mix_seed(cfg.seed, "enroll:" + word));
    rng.shuffle(order);

    KeywordData kd;
    kd.word = word;
    kd.enrollment.keyword = word;
    for (int i = 0; i < cfg.enroll_count; ++i) {
      const ManifestRecord* r = recs[static_cast<size_t>(order[static_cast<size_t>(i)])];
      AudioBuffer audio = read_wav(loader.resolve(r->audio_path));
      kd.enrollment.embeddings.push_back(
          model.embed_single(loader.extractor().compute(standardize_segment(audio))));
    }
    for (size_t i = static_cast<size_t>(cfg.enroll_count); i < recs.size(); ++i) {
      const ManifestRecord* r = recs[static_cast<size_t>(order[i])];
      AudioBuffer audio = read_wav(loader.resolve(r->audio_path));
      Tensor emb = model.embed_single(
          loader.extractor().compute(standardize_segment(audio)));
      double score = score_query(emb, kd.enrollment);
      positive_scores.push_back(score);
      kd.positive_embeddings.push_back(emb);
      if (dump.is_open())
        dump << nlohmann::json{{"trial", r->audio_path},
                               {"keyword", word},
                               {"score", score},
                               {"label", 1}}
                    .dump()
             << "\n";
      ++out.num_positive_trials;
    }
    keywords.push_back(std::move(kd));
  }
  out.num_keywords = static_cast<int64_t>(keywords.size());

  // negative streams: windows embedded once, scored against every keyword
  double stream_hours = 0.0;
  const int64_t hop_frames = std::max<int64_t>(
      1, static_cast<int64_t>(std::llround(cfg.hop_seconds * 100.0)));
  int32_t stream_id = 0;
  for (const ManifestRecord* nr : negatives) {
    AudioBuffer stream = read_wav(loader.resolve(nr->audio_path));
    stream_hours += static_cast<double>(stream.samples.size()) /
                    static_cast<double>(kSampleRate) / 3600.0;
    if (static_cast<int64_t>(stream.samples.size()) < kSegmentSamples) {
      std::cerr << "[eval] warning: negative stream shorter than 2 s: "
                << nr->audio_path << "\n";
      ++stream_id;
      continue;
    }
    Tensor feats = loader.extractor().compute(stream);
    const int64_t total = feats.dim(0);
    for (int64_t start = 0; start + kSegmentFrames <= total; start += hop_frames) {
      Tensor window({kSegmentFrames, kNumMels});
      for (int64_t f = 0; f < kSegmentFrames; ++f)
        for (int64_t m = 0; m < kNumMels; ++m)
          window.at2(f, m) = feats.at2(start + f, m);
      Tensor emb = model.embed_single(window);
      double time_s = static_cast<double>(start) / 100.0;
      for (size_t k = 0; k < keywords.size(); ++k) {
        NegativeWindow w;
        w.stream = static_cast<int32_t>(keywords.size()) * stream_id +
                   static_cast<int32_t>(k);
        w.time = time_s;
        w.score = score_query(emb, keywords[k].enrollment);
        negative_windows.push_back(w);
        if (dump.is_open())
          dump << nlohmann::json{{"trial", nr->audio_path + "@" +
                                               std::to_string(time_s)},
                                 {"keyword", keywords[k].word},
                                 {"score", w.score},
                                 {"label", 0}}
                      .dump()
               << "\n";
      }
      ++out.num_negative_windows;
    }
    ++stream_id;
  }
  out.negative_keyword_hours = stream_hours * static_cast<double>(keywords.size());
  check_data(out.num_negative_windows > 0, "no scoreable negative windows");

  std::vector<double> neg_scores;
  neg_scores.reserve(negative_windows.size());
  for (const auto& w : negative_windows) neg_scores.push_back(w.score);
  out.window_curve =
      det_curve(positive_scores, neg_scores, out.negative_keyword_hours);
  out.event_curve =
      det_curve_events(positive_scores, negative_windows,
                       out.negative_keyword_hours, cfg.lockout_seconds);
  try {
    out.frr_window = frr_at_fa(out.window_curve, cfg.target_fa_per_hour);
  } catch (const DataError&) {
    out.frr_window = std::nullopt;
  }
  try {
    out.frr_event = frr_at_fa(out.event_curve, cfg.target_fa_per_hour);
  } catch (const DataError&) {
    out.frr_event = std::nullopt;
  }

  // embedding-space separation diagnostics over positive trials
  double within = 0.0, cross = 0.0;
  int64_t nw = 0, nc = 0;
  for (size_t a = 0; a < keywords.size(); ++a) {
    const auto& ea = keywords[a].positive_embeddings;
    for (size_t i = 0; i < ea.size(); ++i) {
      for (size_t j = i + 1; j < ea.size(); ++j) {
        within += 1.0 - cosine_distance(ea[i], ea[j]);
        ++nw;
      }
      for (size_t bk = a + 1; bk < keywords.size(); ++bk) {
        for (const Tensor& eb : keywords[bk].positive_embeddings) {
          cross += 1.0 - cosine_distance(ea[i], eb);
          ++nc;
        }
      }
    }
  }
  out.within_word_similarity = nw > 0 ? within / static_cast<double>(nw) : 0.0;
  out.cross_word_similarity = nc > 0 ? cross / static_cast<double>(nc) : 0.0;
  return out;
}

}  // namespace kws
