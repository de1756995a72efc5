// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#include "kws/training.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace kws {

double cyclical_lr(int64_t step, const TrainConfig& cfg) {
  cfg.validate();
  check_config(step >= 0, "cyclical_lr step must be >= 0");
  const int64_t half = cfg.half_cycle_steps;
  const int64_t cycle = step / (2 * half);
  const int64_t pos = step % (2 * half);
  const double tri = pos <= half ? static_cast<double>(pos) / static_cast<double>(half)
                                 : static_cast<double>(2 * half - pos) /
                                       static_cast<double>(half);
  const double amp = (cfg.lr_max - cfg.lr_min) / std::pow(2.0, cycle);
  return cfg.lr_min + amp * tri;
}

Adam::Adam(std::vector<std::pair<std::string, ag::Value>> params, double beta1,
           double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto& [name, p] : params) {
    Slot s;
    s.name = name;
    s.param = p;
    s.m = Tensor::zeros(p->val.shape());
    s.v = Tensor::zeros(p->val.shape());
    slots_.push_back(std::move(s));
  }
}

void Adam::zero_grad() {
  for (auto& s : slots_) {
    s.param->grad = Tensor();
    s.param->grad_ready = false;
  }
}

void Adam::step(double lr, double grad_clip) {
  ++t_;
  double clip_scale = 1.0;
  if (grad_clip > 0.0) {
    double sq = 0.0;
    for (const auto& s : slots_) {
      if (!s.param->grad_ready) continue;
      const double* g = s.param->grad.data();
      for (int64_t i = 0; i < s.param->grad.numel(); ++i) sq += g[i] * g[i];
    }
    double norm = std::sqrt(sq);
    if (norm > grad_clip) clip_scale = grad_clip / norm;
  }
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& s : slots_) {
    const int64_t n = s.param->val.numel();
    double* p = s.param->val.data();
    double* m = s.m.data();
    double* v = s.v.data();
    const bool has_grad = s.param->grad_ready;
    const double* g = has_grad ? s.param->grad.data() : nullptr;
    for (int64_t i = 0; i < n; ++i) {
      double gi = has_grad ? g[i] * clip_scale : 0.0;
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

std::map<std::string, Tensor> Adam::state() const {
  std::map<std::string, Tensor> out;
  for (const auto& s : slots_) {
    out["m:" + s.name] = s.m;
    out["v:" + s.name] = s.v;
  }
  out["t"] = Tensor::scalar(static_cast<double>(t_));
  return out;
}

void Adam::load_state(const std::map<std::string, Tensor>& state) {
  auto t_it = state.find("t");
  check_data(t_it != state.end(), "optimizer state missing step counter");
  t_ = static_cast<int64_t>(t_it->second[0]);
  for (auto& s : slots_) {
    auto m_it = state.find("m:" + s.name);
    auto v_it = state.find("v:" + s.name);
    check_data(m_it != state.end() && v_it != state.end(),
               "optimizer state missing slots for '" + s.name + "'");
    check_data(m_it->second.shape() == s.m.shape(),
               "optimizer state shape mismatch for '" + s.name + "'");
    s.m = m_it->second;
    s.v = v_it->second;
  }
}

Trainer::Trainer(TrainModel& model, const Vocabulary& vocab, TrainConfig cfg,
                 std::string out_dir)
    : model_(model), vocab_(vocab), cfg_(cfg), out_dir_(std::move(out_dir)) {
  cfg_.validate();
  std::filesystem::create_directories(out_dir_);
  log_path_ = out_dir_ + "/metrics.jsonl";
}

void Trainer::log_line(const nlohmann::json& j) {
  std::ofstream f(log_path_, std::ios::app);
  f << j.dump() << "\n";
}

Trainer::Batch Trainer::make_batch(const std::vector<TrainingExample>& examples,
                                   const std::vector<int64_t>& idx) const {
  const int64_t n = static_cast<int64_t>(idx.size());
  const int64_t t_in = examples[static_cast<size_t>(idx[0])].features.dim(0);
  const int64_t mel = examples[static_cast<size_t>(idx[0])].features.dim(1);
  const int64_t t_out = model_.base().encoder().out_frames(t_in);

  Batch b;
  b.features = Tensor::zeros({n, mel, t_in});
  b.labels.phoneme.reserve(static_cast<size_t>(n * t_out));
  for (int64_t r = 0; r < n; ++r) {
    const TrainingExample& ex = examples[static_cast<size_t>(idx[r])];
    check_data(ex.features.dim(0) == t_in && ex.features.dim(1) == mel,
               "inconsistent feature shape in batch: " + ex.id);
    for (int64_t i = 0; i < t_in; ++i)
      for (int64_t j = 0; j < mel; ++j)
        b.features.at3(r, j, i) = ex.features.at2(i, j);
    b.labels.word.push_back(ex.y_word);
    b.labels.speaker.push_back(ex.y_speaker);
    for (int64_t f = 0; f < t_out; ++f) {
      int64_t src = model_.base().label_source_frame(f, t_in);
      b.labels.phoneme.push_back(ex.y_phoneme[static_cast<size_t>(src)]);
    }
    b.ids.push_back(ex.id);
  }
  return b;
}

double Trainer::word_accuracy(const std::vector<TrainingExample>& examples) {
  if (examples.empty()) return 0.0;
  bool was_training = model_.training();
  model_.set_training(false);
  int64_t correct = 0;
  const int64_t chunk = cfg_.batch_size;
  {
    ag::NoGradGuard ng;
    for (int64_t lo = 0; lo < static_cast<int64_t>(examples.size()); lo += chunk) {
      int64_t hi = std::min<int64_t>(examples.size(), lo + chunk);
      std::vector<int64_t> idx;
      for (int64_t i = lo; i < hi; ++i) idx.push_back(i);
      Batch b = make_batch(examples, idx);
      ag::Value frames = model_.base().frames(ag::constant(b.features));
      ag::Value emb = model_.base().embed(frames);
      ag::Value scores = model_.heads().word_scores(emb);
      const int64_t c = scores->val.dim(1);
      for (int64_t r = 0; r < hi - lo; ++r) {
        int64_t arg = 0;
        double best = scores->val.at2(r, 0);
        for (int64_t j = 1; j < c; ++j)
          if (scores->val.at2(r, j) > best) {
            best = scores->val.at2(r, j);
            arg = j;
          }
        if (arg == b.labels.word[static_cast<size_t>(r)]) ++correct;
      }
    }
  }
  model_.set_training(was_training);
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

TrainResult Trainer::run(const std::vector<TrainingExample>& train,
                         const std::vector<TrainingExample>& dev,
                         const std::optional<std::string>& resume_from) {
  check_data(!train.empty(), "training split is empty");

  Adam adam(model_.named_params());
  int64_t start_epoch = 0;
  int64_t global_step = 0;
  if (resume_from) {
    Checkpoint ckpt = load_checkpoint(*resume_from);
    restore_module(model_, ckpt);
    adam.load_state(ckpt.opt_state);
    start_epoch = ckpt.meta.epoch;
    global_step = ckpt.meta.step;
    std::cerr << "[train] resumed from " << *resume_from << " at epoch "
              << start_epoch << ", step " << global_step << "\n";
  } else {
    // fresh run: truncate any previous log
    std::ofstream f(log_path_, std::ios::trunc);
  }

  const ModelConfig& mc = model_.base().config();
  const HybridLossConfig& lc = model_.heads().config();
  TrainResult result;
  result.best_dev_word_err = 1.0;

  // recover best-so-far bookkeeping on resume
  if (resume_from) {
    std::ifstream log(log_path_);
    std::string line;
    while (std::getline(log, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (!j.is_discarded() && j.value("type", "") == "epoch")
        result.best_dev_word_err =
            std::min(result.best_dev_word_err,
                     j.value("dev_word_err", 1.0));
    }
  }

  for (int64_t epoch = start_epoch; epoch < cfg_.epochs; ++epoch) {
    model_.set_training(true);
    auto batches =
        make_batches(static_cast<int64_t>(train.size()), cfg_.batch_size,
                     mix_seed(cfg_.seed, "epoch_" + std::to_string(epoch)));
    for (const auto& idx : batches) {
      Batch b = make_batch(train, idx);
      double lr = cyclical_lr(global_step, cfg_);
      adam.zero_grad();
      ag::Value frames = model_.base().frames(ag::constant(b.features));
      ag::Value emb = model_.base().embed(frames);
      LossBundle bundle = model_.heads().compute(emb, frames, b.labels);
      if (!std::isfinite(bundle.total->val[0])) {
        std::string ids;
        for (const auto& id : b.ids) ids += " " + id;
        throw NumericError("non-finite loss at step " +
                           std::to_string(global_step) + "; batch:" + ids);
      }
      ag::backward(bundle.total);
      adam.step(lr, cfg_.grad_clip);
      log_line({{"type", "step"},
                {"epoch", epoch},
                {"step", global_step},
                {"lr", lr},
                {"loss_word", bundle.word},
                {"loss_speaker", bundle.speaker},
                {"loss_phoneme", bundle.phoneme},
                {"loss_total", bundle.total->val[0]}});
      ++global_step;
    }

    double dev_acc = dev.empty() ? 0.0 : word_accuracy(dev);
    double dev_err = 1.0 - dev_acc;
    result.best_dev_word_err = std::min(result.best_dev_word_err, dev_err);
    std::string ckpt_path =
        out_dir_ + "/epoch_" + std::to_string(epoch + 1) + ".ckpt";
    CheckpointMeta meta;
    meta.epoch = epoch + 1;
    meta.step = global_step;
    save_checkpoint(ckpt_path, mc, lc, vocab_, model_, adam.state(), meta);
    log_line({{"type", "epoch"},
              {"epoch", epoch},
              {"dev_word_acc", dev_acc},
              {"dev_word_err", dev_err},
              {"best_dev_word_err", result.best_dev_word_err},
              {"checkpoint", "epoch_" + std::to_string(epoch + 1) + ".ckpt"}});
    std::cerr << "[train] epoch " << epoch + 1 << "/" << cfg_.epochs
              << " dev_word_acc=" << dev_acc << "\n";
    result.final_checkpoint = ckpt_path;
  }
  result.steps = global_step;
  return result;
}

}  // namespace kws
