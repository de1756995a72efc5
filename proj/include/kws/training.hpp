// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0
//
// Single-process trainer: Adam under a triangular2 cyclical learning rate,
// per-step JSONL metric logging, per-epoch checkpoints, exact resume.

#ifndef KWS_TRAINING_HPP_
#define KWS_TRAINING_HPP_

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kws/model.hpp"

namespace kws {

struct TrainConfig {
  int epochs = 40;
  int batch_size = 64;
  double lr_min = 1e-8;
  double lr_max = 1e-3;
  int64_t half_cycle_steps = 20000;
  double grad_clip = 0.0;  // disabled when <= 0
  uint64_t seed = 1;

  void validate() const {
    check_config(epochs >= 1, "train.epochs must be >= 1");
    check_config(batch_size >= 1, "train.batch_size must be >= 1");
    check_config(lr_min < lr_max, "train.lr_min must be < lr_max");
    check_config(half_cycle_steps >= 1, "train.half_cycle_steps must be >= 1");
  }
  nlohmann::json to_json() const {
    return nlohmann::json{{"epochs", epochs},
                          {"batch_size", batch_size},
                          {"lr_min", lr_min},
                          {"lr_max", lr_max},
                          {"half_cycle_steps", half_cycle_steps},
                          {"grad_clip", grad_clip},
                          {"seed", seed}};
  }
  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr_min = j.value("lr_min", c.lr_min);
    c.lr_max = j.value("lr_max", c.lr_max);
    c.half_cycle_steps = j.value("half_cycle_steps", c.half_cycle_steps);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.seed = j.value("seed", c.seed);
    return c;
  }
};

// Triangular wave from lr_min up to the cycle peak and back, one full cycle
// every 2*half_cycle_steps; the peak amplitude halves each cycle.
double cyclical_lr(int64_t step, const TrainConfig& cfg);

class Adam {
 public:
  explicit Adam(std::vector<std::pair<std::string, ag::Value>> params,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void zero_grad();
  void step(double lr, double grad_clip = 0.0);
  int64_t step_count() const { return t_; }

  std::map<std::string, Tensor> state() const;
  void load_state(const std::map<std::string, Tensor>& state);

 private:
  struct Slot {
    std::string name;
    ag::Value param;
    Tensor m, v;
  };
  std::vector<Slot> slots_;
  double beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

struct TrainResult {
  int64_t steps = 0;
  double best_dev_word_err = 1.0;
  std::string final_checkpoint;
};

class Trainer {
 public:
  Trainer(TrainModel& model, const Vocabulary& vocab, TrainConfig cfg,
          std::string out_dir);

  // Trains over the given splits; when `resume_from` is set, parameters,
  // optimizer state and the epoch/step counters are restored first.
  TrainResult run(const std::vector<TrainingExample>& train,
                  const std::vector<TrainingExample>& dev,
                  const std::optional<std::string>& resume_from = std::nullopt);

  // Fraction of examples whose argmax word score matches the label.
  double word_accuracy(const std::vector<TrainingExample>& examples);

  // Assembles [N,40,T] features plus labels (phonemes resampled to the
  // encoder frame rate) for a set of example indices.
  struct Batch {
    Tensor features;
    BatchLabels labels;
    std::vector<std::string> ids;
  };
  Batch make_batch(const std::vector<TrainingExample>& examples,
                   const std::vector<int64_t>& idx) const;

 private:
  void log_line(const nlohmann::json& j);

  TrainModel& model_;
  const Vocabulary& vocab_;
  TrainConfig cfg_;
  std::string out_dir_;
  std::string log_path_;
};

}  // namespace kws

#endif  // KWS_TRAINING_HPP_
