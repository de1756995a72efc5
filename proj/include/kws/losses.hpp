// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0
//
// Margin losses over cosine geometry (additive angular margin, SoftTriple),
// the gradient-reversal speaker branch and the frame-level phoneme branch,
// combined into the multi-task hybrid objective.

#ifndef KWS_LOSSES_HPP_
#define KWS_LOSSES_HPP_

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kws/nn.hpp"

namespace kws {

struct AAMConfig {
  double margin = 0.2;  // radians
  double scale = 32.0;
  void validate() const {
    check_config(margin >= 0.0 && margin < M_PI / 2.0,
                 "aam.margin must lie in [0, pi/2)");
    check_config(scale > 0.0, "aam.scale must be > 0");
  }
};

struct SoftTripleConfig {
  double lambda = 60.0;
  double delta = 0.03;
  int64_t centers_per_class = 10;
  double gamma = 0.1;  // temperature of the per-class center softmax
  void validate() const {
    check_config(lambda > 0.0, "softtriple.lambda must be > 0");
    check_config(delta >= 0.0, "softtriple.delta must be >= 0");
    check_config(centers_per_class >= 1, "softtriple.centers_per_class >= 1");
    check_config(gamma > 0.0, "softtriple.gamma must be > 0");
  }
};

enum class WordLossKind { kAam, kSoftTriple, kCrossEntropy };
std::string word_loss_name(WordLossKind k);
WordLossKind word_loss_from_name(const std::string& s);

// Weight matrix of a classification branch. For margin losses the rows act
// as unit directions; kCrossEntropy keeps a plain linear layer with bias.
class ClassifierHead : public nn::Module {
 public:
  ClassifierHead(std::string path, uint64_t seed, int64_t dim, int64_t classes,
                 int64_t centers_per_class = 1, bool plain_linear = false);

  int64_t classes() const { return classes_; }
  int64_t centers() const { return centers_; }
  int64_t dim() const { return dim_; }
  ag::Value weight() const { return w_; }

  // [N,d] -> [N, classes*centers] cosine similarities (rows normalized).
  ag::Value cosine_logits(const ag::Value& emb) const;
  // [N,d] -> [N, classes] affine logits (kCrossEntropy heads only).
  ag::Value linear_logits(const ag::Value& emb) const;

 private:
  int64_t dim_, classes_, centers_;
  bool plain_linear_;
  ag::Value w_, b_;
};

// L2-normalizes rows of [N,d]; throws NumericError("degenerate embedding")
// when a row norm underflows.
ag::Value normalize_rows(const ag::Value& x, const std::string& what);

// Additive angular margin loss, averaged over the batch.
ag::Value aam_loss(const ag::Value& emb, const ClassifierHead& head,
                   const std::vector<int64_t>& labels, const AAMConfig& cfg);

// SoftTriple loss with K centers per class, averaged over the batch.
ag::Value softtriple_loss(const ag::Value& emb, const ClassifierHead& head,
                          const std::vector<int64_t>& labels,
                          const SoftTripleConfig& cfg);

// Plain softmax cross-entropy on linear logits (baseline word loss).
ag::Value cross_entropy_loss(const ag::Value& emb, const ClassifierHead& head,
                             const std::vector<int64_t>& labels);

// Mean of per-frame AAM losses over unmasked frames.
// frames: [N, D, T]; labels/mask: N*T entries, frame-major per example;
// mask entries with label < 0 are excluded.
ag::Value phoneme_loss(const ag::Value& frames, const ClassifierHead& head,
                       const std::vector<int64_t>& frame_labels,
                       const AAMConfig& cfg);

struct HybridLossConfig {
  WordLossKind word_loss = WordLossKind::kAam;
  double speaker_weight = 0.1;  // eta
  double phoneme_weight = 0.5;  // mu
  AAMConfig word_aam;
  SoftTripleConfig word_softtriple;
  AAMConfig speaker_aam;
  AAMConfig phoneme_aam;

  void validate() const;
  nlohmann::json to_json() const;
  static HybridLossConfig from_json(const nlohmann::json& j);
};

struct LossBundle {
  ag::Value total;
  double word = 0.0;
  double speaker = 0.0;
  double phoneme = 0.0;
};

struct BatchLabels {
  std::vector<int64_t> word;
  std::vector<int64_t> speaker;
  std::vector<int64_t> phoneme;  // N*T' frame labels, -1 masks a frame
};

// Word, reverse-speaker and phoneme heads over one embedding space. The
// speaker branch consumes the utterance embedding through gradient reversal;
// the phoneme branch consumes pre-pooling frames. Branches with zero weight
// are skipped entirely, so a zero-weight hybrid run computes exactly the
// single-task word objective.
class MultiTaskHeads : public nn::Module {
 public:
  MultiTaskHeads(std::string path, uint64_t seed, int64_t embedding_dim,
                 int64_t frame_dim, int64_t word_classes,
                 int64_t speaker_classes, int64_t phoneme_classes,
                 const HybridLossConfig& cfg);

  LossBundle compute(const ag::Value& embedding, const ag::Value& frames,
                     const BatchLabels& labels) const;

  ag::Value word_scores(const ag::Value& embedding) const;  // argmax-ready
  const ClassifierHead& word_head() const { return *word_; }
  const ClassifierHead& speaker_head() const { return *speaker_; }
  const ClassifierHead& phoneme_head() const { return *phoneme_; }
  const HybridLossConfig& config() const { return cfg_; }

 private:
  HybridLossConfig cfg_;
  std::unique_ptr<ClassifierHead> word_, speaker_, phoneme_;
};

}  // namespace kws

#endif  // KWS_LOSSES_HPP_
