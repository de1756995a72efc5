// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#include "kws/losses.hpp"

#include <cmath>

namespace kws {

using ag::Value;

std::string word_loss_name(WordLossKind k) {
  switch (k) {
    case WordLossKind::kAam:
      return "aam";
    case WordLossKind::kSoftTriple:
      return "softtriple";
    case WordLossKind::kCrossEntropy:
      return "ce";
  }
  return "?";
}

WordLossKind word_loss_from_name(const std::string& s) {
  if (s == "aam") return WordLossKind::kAam;
  if (s == "softtriple") return WordLossKind::kSoftTriple;
  if (s == "ce") return WordLossKind::kCrossEntropy;
  throw ConfigError("unknown word loss '" + s + "' (expected aam|softtriple|ce)");
}

ClassifierHead::ClassifierHead(std::string path, uint64_t seed, int64_t dim,
                               int64_t classes, int64_t centers_per_class,
                               bool plain_linear)
    : nn::Module(std::move(path), seed),
      dim_(dim),
      classes_(classes),
      centers_(centers_per_class),
      plain_linear_(plain_linear) {
  check_config(classes >= 2, "classifier head needs >= 2 classes at " + this->path());
  w_ = make_param("weight", {classes * centers_per_class, dim},
                  Init::kUniformFanIn, dim);
  if (plain_linear_)
    b_ = make_param("bias", {classes * centers_per_class}, Init::kZeros);
}

Value normalize_rows(const Value& x, const std::string& what) {
  const int64_t d = x->val.dim(x->val.rank() - 1);
  const int64_t rows = x->val.numel() / d;
  for (int64_t r = 0; r < rows; ++r) {
    double n = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      double v = x->val[r * d + i];
      n += v * v;
    }
    check_numeric(n > 1e-24, "degenerate " + what);
  }
  Value sq = ag::sum_axis(ag::square(x), x->val.rank() - 1, true);
  Value inv = ag::div(ag::constant(Tensor::scalar(1.0)),
                      ag::sqrt_v(ag::clamp_min(sq, 1e-24)));
  return ag::mul(x, inv);
}

Value ClassifierHead::cosine_logits(const Value& emb) const {
  Value e = normalize_rows(emb, "embedding");
  Value w = normalize_rows(w_, "head weight");
  return ag::matmul(e, ag::transpose2d(w));
}

Value ClassifierHead::linear_logits(const Value& emb) const {
  check_config(plain_linear_, "linear_logits on a cosine head");
  return ag::linear(emb, w_, b_);
}

namespace {

Value nll_mean(const Value& logits, const std::vector<int64_t>& labels) {
  Value logp = ag::log_softmax_lastdim(logits);
  Value picked = ag::pick_lastdim(logp, labels);
  return ag::neg(ag::mean_all(picked));
}

}  // namespace

Value aam_loss(const Value& emb, const ClassifierHead& head,
               const std::vector<int64_t>& labels, const AAMConfig& cfg) {
  cfg.validate();
  check_config(head.centers() == 1, "aam head must have one center per class");
  const int64_t n = emb->val.dim(0);
  check_config(static_cast<int64_t>(labels.size()) == n,
               "aam label count mismatch");
  for (int64_t y : labels)
    check_config(y >= 0 && y < head.classes(), "aam label out of range");

  Value cos = head.cosine_logits(emb);          // [N, C]
  Value ct = ag::pick_lastdim(cos, labels);     // cos(theta_y)
  // cos(theta + m) = cos t cos m - sin t sin m, with sin t from the identity
  Value sin_t = ag::sqrt_v(ag::clamp_min(
      ag::sub(ag::constant(Tensor::full({n}, 1.0)), ag::square(ct)), 1e-12));
  Value ct_m = ag::sub(ag::scale(ct, std::cos(cfg.margin)),
                       ag::scale(sin_t, std::sin(cfg.margin)));
  Value adjusted = ag::add_at_lastdim(cos, labels, ag::sub(ct_m, ct));
  return nll_mean(ag::scale(adjusted, cfg.scale), labels);
}

Value softtriple_loss(const Value& emb, const ClassifierHead& head,
                      const std::vector<int64_t>& labels,
                      const SoftTripleConfig& cfg) {
  cfg.validate();
  check_config(head.centers() == cfg.centers_per_class,
               "softtriple head centers mismatch");
  const int64_t n = emb->val.dim(0);
  const int64_t c = head.classes();
  const int64_t k = head.centers();
  check_config(static_cast<int64_t>(labels.size()) == n,
               "softtriple label count mismatch");
  for (int64_t y : labels)
    check_config(y >= 0 && y < c, "softtriple label out of range");

  Value cos = head.cosine_logits(emb);             // [N, C*K]
  Value grouped = ag::reshape(cos, {n, c, k});
  // per-class similarity: center-softmax weighted sum of center similarities
  Value q = ag::softmax_lastdim(ag::scale(grouped, 1.0 / cfg.gamma));
  Value sprime = ag::sum_axis(ag::mul(q, grouped), 2, false);  // [N, C]
  Value margin = ag::constant(Tensor::full({n}, -cfg.delta));
  Value adjusted = ag::add_at_lastdim(sprime, labels, margin);
  return nll_mean(ag::scale(adjusted, cfg.lambda), labels);
}

Value cross_entropy_loss(const Value& emb, const ClassifierHead& head,
                         const std::vector<int64_t>& labels) {
  return nll_mean(head.linear_logits(emb), labels);
}

Value phoneme_loss(const Value& frames, const ClassifierHead& head,
                   const std::vector<int64_t>& frame_labels,
                   const AAMConfig& cfg) {
  const int64_t n = frames->val.dim(0);
  const int64_t d = frames->val.dim(1);
  const int64_t t = frames->val.dim(2);
  check_config(static_cast<int64_t>(frame_labels.size()) == n * t,
               "phoneme label count mismatch: " +
                   std::to_string(frame_labels.size()) + " labels for " +
                   std::to_string(n * t) + " frames");
  std::vector<int64_t> rows, labels;
  for (int64_t i = 0; i < n * t; ++i) {
    if (frame_labels[static_cast<size_t>(i)] >= 0) {
      rows.push_back(i);
      labels.push_back(frame_labels[static_cast<size_t>(i)]);
    }
  }
  check_numeric(!rows.empty(), "no supervised frames");
  Value flat = ag::reshape(ag::transpose12(frames), {n * t, d});
  Value selected = ag::index_select0(flat, rows);
  return aam_loss(selected, head, labels, cfg);
}

void HybridLossConfig::validate() const {
  check_config(speaker_weight >= 0.0, "loss.speaker_weight must be >= 0");
  check_config(phoneme_weight >= 0.0, "loss.phoneme_weight must be >= 0");
  word_aam.validate();
  word_softtriple.validate();
  speaker_aam.validate();
  phoneme_aam.validate();
}

nlohmann::json HybridLossConfig::to_json() const {
  return nlohmann::json{
      {"word_loss", word_loss_name(word_loss)},
      {"speaker_weight", speaker_weight},
      {"phoneme_weight", phoneme_weight},
      {"word_aam", {{"margin", word_aam.margin}, {"scale", word_aam.scale}}},
      {"word_softtriple",
       {{"lambda", word_softtriple.lambda},
        {"delta", word_softtriple.delta},
        {"centers_per_class", word_softtriple.centers_per_class},
        {"gamma", word_softtriple.gamma}}},
      {"speaker_aam",
       {{"margin", speaker_aam.margin}, {"scale", speaker_aam.scale}}},
      {"phoneme_aam",
       {{"margin", phoneme_aam.margin}, {"scale", phoneme_aam.scale}}}};
}

HybridLossConfig HybridLossConfig::from_json(const nlohmann::json& j) {
  HybridLossConfig c;
  if (j.contains("word_loss"))
    c.word_loss = word_loss_from_name(j.at("word_loss").get<std::string>());
  c.speaker_weight = j.value("speaker_weight", c.speaker_weight);
  c.phoneme_weight = j.value("phoneme_weight", c.phoneme_weight);
  auto read_aam = [&](const char* key, AAMConfig& out) {
    if (j.contains(key)) {
      out.margin = j.at(key).value("margin", out.margin);
      out.scale = j.at(key).value("scale", out.scale);
    }
  };
  read_aam("word_aam", c.word_aam);
  read_aam("speaker_aam", c.speaker_aam);
  read_aam("phoneme_aam", c.phoneme_aam);
  if (j.contains("word_softtriple")) {
    const auto& s = j.at("word_softtriple");
    c.word_softtriple.lambda = s.value("lambda", c.word_softtriple.lambda);
    c.word_softtriple.delta = s.value("delta", c.word_softtriple.delta);
    c.word_softtriple.centers_per_class =
        s.value("centers_per_class", c.word_softtriple.centers_per_class);
    c.word_softtriple.gamma = s.value("gamma", c.word_softtriple.gamma);
  }
  return c;
}

MultiTaskHeads::MultiTaskHeads(std::string path, uint64_t seed,
                               int64_t embedding_dim, int64_t frame_dim,
                               int64_t word_classes, int64_t speaker_classes,
                               int64_t phoneme_classes,
                               const HybridLossConfig& cfg)
    : nn::Module(std::move(path), seed), cfg_(cfg) {
  cfg_.validate();
  const bool st = cfg.word_loss == WordLossKind::kSoftTriple;
  word_ = std::make_unique<ClassifierHead>(
      child_path("word"), seed, embedding_dim, word_classes,
      st ? cfg.word_softtriple.centers_per_class : 1,
      cfg.word_loss == WordLossKind::kCrossEntropy);
  speaker_ = std::make_unique<ClassifierHead>(child_path("speaker"), seed,
                                              embedding_dim, speaker_classes);
  phoneme_ = std::make_unique<ClassifierHead>(child_path("phoneme"), seed,
                                              frame_dim, phoneme_classes);
  adopt(word_.get());
  adopt(speaker_.get());
  adopt(phoneme_.get());
}

LossBundle MultiTaskHeads::compute(const Value& embedding, const Value& frames,
                                   const BatchLabels& labels) const {
  check_config(!labels.word.empty(),
               "word supervision missing from the batch");
  LossBundle out;
  Value word;
  switch (cfg_.word_loss) {
    case WordLossKind::kAam:
      word = aam_loss(embedding, *word_, labels.word, cfg_.word_aam);
      break;
    case WordLossKind::kSoftTriple:
      word = softtriple_loss(embedding, *word_, labels.word,
                             cfg_.word_softtriple);
      break;
    case WordLossKind::kCrossEntropy:
      word = cross_entropy_loss(embedding, *word_, labels.word);
      break;
  }
  out.word = word->val[0];
  Value total = word;
  if (cfg_.speaker_weight > 0.0) {
    check_config(!labels.speaker.empty(),
                 "speaker supervision missing while speaker_weight > 0");
    // forward value adds eta * L_spk; the reversal only flips the gradient
    // flowing back into the embedding
    Value spk = aam_loss(ag::gradient_reversal(embedding), *speaker_,
                         labels.speaker, cfg_.speaker_aam);
    out.speaker = spk->val[0];
    total = ag::add(total, ag::scale(spk, cfg_.speaker_weight));
  }
  if (cfg_.phoneme_weight > 0.0) {
    check_config(!labels.phoneme.empty(),
                 "phoneme supervision missing while phoneme_weight > 0");
    Value phn = phoneme_loss(frames, *phoneme_, labels.phoneme, cfg_.phoneme_aam);
    out.phoneme = phn->val[0];
    total = ag::add(total, ag::scale(phn, cfg_.phoneme_weight));
  }
  out.total = total;
  return out;
}

Value MultiTaskHeads::word_scores(const Value& embedding) const {
  if (cfg_.word_loss == WordLossKind::kCrossEntropy)
    return word_->linear_logits(embedding);
  Value cos = word_->cosine_logits(embedding);
  if (word_->centers() == 1) return cos;
  const int64_t n = embedding->val.dim(0);
  Value grouped = ag::reshape(cos, {n, word_->classes(), word_->centers()});
  Value q = ag::softmax_lastdim(
      ag::scale(grouped, 1.0 / cfg_.word_softtriple.gamma));
  return ag::sum_axis(ag::mul(q, grouped), 2, false);
}

}  // namespace kws
