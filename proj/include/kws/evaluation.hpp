// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0
//
// Query-by-example evaluation: enrollment, cosine scoring, sliding-window
// detection over negative streams, DET curves and FRR at a target FA rate.
//
// False-accept counting has two modes. Per-window counting treats every
// fired window as one FA. Event counting applies a lockout: after a firing,
// windows starting within the lockout interval are suppressed, equivalent to
// the maximum number of fired windows pairwise separated by the lockout.
// Event counts are monotone in the threshold, so DET monotonicity holds in
// both modes.

#ifndef KWS_EVALUATION_HPP_
#define KWS_EVALUATION_HPP_

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kws/model.hpp"

namespace kws {

struct EnrollmentSet {
  std::string keyword;
  std::vector<Tensor> embeddings;  // exactly enroll_count entries
};

// Embeds each utterance (standardize -> features -> encoder -> pool).
EnrollmentSet enroll(const std::vector<AudioBuffer>& utterances,
                     EmbeddingModel& model, const LogMelExtractor& fe,
                     const std::string& keyword, int expected_count = 3);

// 1 - cos(a, b); throws NumericError on a zero-norm vector.
double cosine_distance(const Tensor& a, const Tensor& b);

// Minimum cosine distance to any enrollment embedding.
double score_query(const Tensor& query_embedding,
                   const EnrollmentSet& enrollment);

struct WindowScore {
  double time_s = 0.0;
  double distance = 0.0;
};

// 2 s window advanced by `hop_s`; one score per window position. A stream
// shorter than one window returns an empty list with a warning.
std::vector<WindowScore> sliding_detect(const AudioBuffer& stream,
                                        const EnrollmentSet& enrollment,
                                        EmbeddingModel& model,
                                        const LogMelExtractor& fe,
                                        double hop_s = 0.1);

struct DetPoint {
  double threshold = 0.0;
  double fa_per_hour = 0.0;
  double frr = 0.0;
};

struct DETCurve {
  std::vector<DetPoint> points;  // ordered by ascending threshold
  double negative_hours = 0.0;
  bool deduplicated = false;
};

// A negative trial window; `stream` scopes the lockout, `time` orders it.
struct NegativeWindow {
  int32_t stream = 0;
  double time = 0.0;
  double score = 0.0;
};

// Threshold sweep at all distinct scores (plus a detector-off point).
// Detection fires when distance <= threshold.
DETCurve det_curve(const std::vector<double>& positive_scores,
                   const std::vector<double>& negative_scores,
                   double negative_hours);

DETCurve det_curve_events(const std::vector<double>& positive_scores,
                          std::vector<NegativeWindow> negative_windows,
                          double negative_hours, double lockout_s = 2.0);

// Lockout event count among fired windows of one stream, time-ordered input.
int64_t lockout_events(const std::vector<double>& times, double lockout_s);

// Linear interpolation of FRR between the operating points bracketing
// `target_fa`; exact hits use the best (lowest) FRR at that FA.
double frr_at_fa(const DETCurve& curve, double target_fa);

// Multinomial logistic probe trained on frozen embeddings; returns held-out
// accuracy. Used to measure how much speaker information survives in the
// embedding space.
double speaker_probe_accuracy(const std::vector<Tensor>& train_embeddings,
                              const std::vector<int64_t>& train_speakers,
                              const std::vector<Tensor>& test_embeddings,
                              const std::vector<int64_t>& test_speakers,
                              int64_t num_speakers, uint64_t seed,
                              int steps = 300);

struct EvalConfig {
  int enroll_count = 3;
  double hop_seconds = 0.1;
  double target_fa_per_hour = 0.3;
  double lockout_seconds = 2.0;
  uint64_t seed = 77;

  void validate() const {
    check_config(enroll_count >= 1, "eval.enroll_count must be >= 1");
    check_config(hop_seconds > 0.0, "eval.hop_seconds must be > 0");
    check_config(target_fa_per_hour > 0.0, "eval.target_fa_per_hour must be > 0");
    check_config(lockout_seconds >= 0.0, "eval.lockout_seconds must be >= 0");
  }
  nlohmann::json to_json() const {
    return nlohmann::json{{"enroll_count", enroll_count},
                          {"hop_seconds", hop_seconds},
                          {"target_fa_per_hour", target_fa_per_hour},
                          {"lockout_seconds", lockout_seconds},
                          {"seed", seed}};
  }
  static EvalConfig from_json(const nlohmann::json& j) {
    EvalConfig c;
    c.enroll_count = j.value("enroll_count", c.enroll_count);
    c.hop_seconds = j.value("hop_seconds", c.hop_seconds);
    c.target_fa_per_hour = j.value("target_fa_per_hour", c.target_fa_per_hour);
    c.lockout_seconds = j.value("lockout_seconds", c.lockout_seconds);
    c.seed = j.value("seed", c.seed);
    return c;
  }
};

struct EvalOutcome {
  DETCurve window_curve;
  DETCurve event_curve;
  std::optional<double> frr_window;  // at the target FA rate
  std::optional<double> frr_event;
  double within_word_similarity = 0.0;
  double cross_word_similarity = 0.0;
  int64_t num_keywords = 0;
  int64_t num_positive_trials = 0;
  int64_t num_negative_windows = 0;
  double negative_keyword_hours = 0.0;  // stream hours x keywords
};

// Full QbyE protocol over eval-positive/eval-negative records: per keyword,
// `enroll_count` seeded enrollment picks; remaining positives are scored as
// single standardized windows; every negative stream is swept per keyword.
// When `score_dump_path` is set, one JSONL record per trial is written.
EvalOutcome evaluate_qbye(EmbeddingModel& model, const SegmentLoader& loader,
                          const std::vector<ManifestRecord>& records,
                          const EvalConfig& cfg,
                          const std::optional<std::string>& score_dump_path =
                              std::nullopt);

}  // namespace kws

#endif  // KWS_EVALUATION_HPP_
