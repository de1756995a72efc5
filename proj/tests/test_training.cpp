// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "kws/synth.hpp"
#include "kws/training.hpp"

using namespace kws;
namespace fs = std::filesystem;

namespace {

TrainConfig paper_lr_cfg() {
  TrainConfig cfg;
  cfg.lr_min = 1e-8;
  cfg.lr_max = 1e-3;
  cfg.half_cycle_steps = 20000;
  return cfg;
}

struct TinySetup {
  ModelConfig model_cfg;
  HybridLossConfig loss_cfg;
  SynthConfig synth_cfg;
};

TinySetup tiny_setup() {
  TinySetup s;
  s.model_cfg.encoder.family = EncoderFamily::kLiconet;
  s.model_cfg.encoder.liconet = {8, 3, 2, 2, 8, 2, 3, 2};
  s.model_cfg.pooling.kind = "asp";
  s.model_cfg.pooling.embedding_dim = 16;
  s.model_cfg.pooling.asp_bottleneck = 8;
  s.loss_cfg.word_loss = WordLossKind::kAam;
  s.loss_cfg.speaker_weight = 0.1;
  s.loss_cfg.phoneme_weight = 0.5;
  s.synth_cfg.train_words = 3;
  s.synth_cfg.heldout_words = 1;
  s.synth_cfg.speakers = 2;
  s.synth_cfg.train_per_cell = 2;
  s.synth_cfg.dev_per_cell = 1;
  s.synth_cfg.eval_per_cell = 2;
  s.synth_cfg.unknown_words = 0;
  s.synth_cfg.silence_examples = 2;
  s.synth_cfg.negative_streams = 0;
  return s;
}

std::string read_file(const std::string& p) {
  std::ifstream in(p);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("cyclical lr hits the published anchor points") {
  TrainConfig cfg = paper_lr_cfg();
  CHECK(cyclical_lr(0, cfg) == doctest::Approx(1e-8).epsilon(1e-12));
  CHECK(cyclical_lr(20000, cfg) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(cyclical_lr(60000, cfg) == doctest::Approx(5.000e-4).epsilon(1e-4));
}

TEST_CASE("cyclical lr is continuous, piecewise linear and bounded") {
  TrainConfig cfg = paper_lr_cfg();
  cfg.half_cycle_steps = 50;
  double prev = cyclical_lr(0, cfg);
  for (int64_t s = 1; s <= 500; ++s) {
    double cur = cyclical_lr(s, cfg);
    CHECK(cur >= cfg.lr_min - 1e-18);
    CHECK(cur <= cfg.lr_max + 1e-18);
    // one step never jumps more than the current cycle's slope
    CHECK(std::fabs(cur - prev) <=
          (cfg.lr_max - cfg.lr_min) / static_cast<double>(cfg.half_cycle_steps) + 1e-18);
    prev = cur;
  }
  // second cycle's peak is halved
  CHECK(cyclical_lr(150, cfg) ==
        doctest::Approx(cfg.lr_min + (cfg.lr_max - cfg.lr_min) / 2.0));
}

TEST_CASE("adam state round trip") {
  ag::Value p = ag::param(Tensor::from_flat({2}, {1.0, 2.0}));
  Adam a({{"p", p}});
  p->ensure_grad();
  p->grad[0] = 0.5;
  p->grad[1] = -0.25;
  a.step(0.01);
  auto st = a.state();
  CHECK(st.at("t")[0] == 1.0);

  ag::Value q = ag::param(Tensor::from_flat({2}, {0.0, 0.0}));
  Adam b({{"p", q}});
  b.load_state(st);
  CHECK(b.step_count() == 1);
}

TEST_CASE("smoke train: checkpoints, bookkeeping, reproducibility, resume") {
  fs::path dir = fs::temp_directory_path() / "kws_train_test";
  fs::remove_all(dir);
  TinySetup s = tiny_setup();
  SynthCorpus corpus = generate_synthetic_corpus(s.synth_cfg, (dir / "data").string());
  Vocabulary vocab = build_vocabulary(corpus.records, 1000);
  SegmentLoader loader(vocab, (dir / "data").string());
  auto train = load_split(loader, corpus.records, "train");
  auto dev = load_split(loader, corpus.records, "dev");
  REQUIRE(train.skipped.empty());
  REQUIRE(!train.examples.empty());

  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 8;
  tc.lr_min = 1e-6;
  tc.lr_max = 3e-3;
  tc.half_cycle_steps = 10;
  tc.seed = 42;

  auto run_once = [&](const std::string& name) {
    TrainModel model("train", 7, s.model_cfg, s.loss_cfg, vocab.size(),
                     static_cast<int64_t>(vocab.speakers.size()),
                     static_cast<int64_t>(vocab.phonemes.size()));
    Trainer trainer(model, vocab, tc, (dir / name).string());
    return trainer.run(train.examples, dev.examples);
  };

  TrainResult r1 = run_once("run1");
  CHECK(r1.steps == 2 * ((static_cast<int64_t>(train.examples.size()) + 7) / 8));
  CHECK(fs::exists(dir / "run1" / "epoch_1.ckpt"));
  CHECK(fs::exists(dir / "run1" / "epoch_2.ckpt"));

  // best-dev bookkeeping is monotone non-increasing across epochs
  {
    std::ifstream log((dir / "run1" / "metrics.jsonl").string());
    std::string line;
    double best = 1.0;
    int epochs_seen = 0;
    while (std::getline(log, line)) {
      auto j = nlohmann::json::parse(line);
      if (j["type"] == "epoch") {
        CHECK(j["best_dev_word_err"].get<double>() <= best + 1e-12);
        best = std::min(best, j["best_dev_word_err"].get<double>());
        ++epochs_seen;
      }
    }
    CHECK(epochs_seen == 2);
  }

  // bitwise-identical metric logs for identical config+seed
  TrainResult r2 = run_once("run2");
  (void)r2;
  CHECK(read_file((dir / "run1" / "metrics.jsonl").string()) ==
        read_file((dir / "run2" / "metrics.jsonl").string()));

  // resume from epoch 1 reproduces the uninterrupted run's step losses
  {
    TrainModel model("train", 7, s.model_cfg, s.loss_cfg, vocab.size(),
                     static_cast<int64_t>(vocab.speakers.size()),
                     static_cast<int64_t>(vocab.phonemes.size()));
    TrainConfig one = tc;
    one.epochs = 1;
    Trainer t1(model, vocab, one, (dir / "resume").string());
    t1.run(train.examples, dev.examples);

    TrainModel model2("train", 991, s.model_cfg, s.loss_cfg, vocab.size(),
                      static_cast<int64_t>(vocab.speakers.size()),
                      static_cast<int64_t>(vocab.phonemes.size()));
    Trainer t2(model2, vocab, tc, (dir / "resume").string());
    t2.run(train.examples, dev.examples,
           (dir / "resume" / "epoch_1.ckpt").string());

    // compare second-epoch step losses against run1
    auto step_losses = [&](const std::string& p) {
      std::vector<std::pair<int64_t, double>> out;
      std::ifstream log(p);
      std::string line;
      while (std::getline(log, line)) {
        auto j = nlohmann::json::parse(line);
        if (j["type"] == "step" && j["epoch"].get<int64_t>() == 1)
          out.emplace_back(j["step"].get<int64_t>(),
                           j["loss_total"].get<double>());
      }
      return out;
    };
    auto a = step_losses((dir / "run1" / "metrics.jsonl").string());
    auto b = step_losses((dir / "resume" / "metrics.jsonl").string());
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].first == b[i].first);
      CHECK(std::fabs(a[i].second - b[i].second) < 1e-6);
    }
  }

  // zero-weight hybrid equals single-task word training step for step
  {
    HybridLossConfig word_only = s.loss_cfg;
    word_only.speaker_weight = 0.0;
    word_only.phoneme_weight = 0.0;
    TrainModel m1("train", 7, s.model_cfg, word_only, vocab.size(),
                  static_cast<int64_t>(vocab.speakers.size()),
                  static_cast<int64_t>(vocab.phonemes.size()));
    Trainer t1(m1, vocab, tc, (dir / "zeroed").string());
    t1.run(train.examples, dev.examples);
    // with eta = mu = 0 the auxiliary branches are skipped: the run is the
    // single-task word objective, component for component
    std::ifstream log((dir / "zeroed" / "metrics.jsonl").string());
    std::string line;
    while (std::getline(log, line)) {
      auto j = nlohmann::json::parse(line);
      if (j["type"] == "step") {
        CHECK(j["loss_total"].get<double>() == j["loss_word"].get<double>());
        CHECK(j["loss_speaker"].get<double>() == 0.0);
      }
    }
  }

  // checkpoint round trip restores parameters bit-exactly
  {
    Checkpoint ckpt = load_checkpoint((dir / "run1" / "epoch_2.ckpt").string());
    CHECK(ckpt.meta.epoch == 2);
    TrainModel fresh("train", 12345, s.model_cfg, s.loss_cfg, vocab.size(),
                     static_cast<int64_t>(vocab.speakers.size()),
                     static_cast<int64_t>(vocab.phonemes.size()));
    restore_module(fresh, ckpt);
    TrainModel orig("train", 7, s.model_cfg, s.loss_cfg, vocab.size(),
                    static_cast<int64_t>(vocab.speakers.size()),
                    static_cast<int64_t>(vocab.phonemes.size()));
    Checkpoint again = load_checkpoint((dir / "run1" / "epoch_2.ckpt").string());
    restore_module(orig, again);
    auto pa = fresh.named_params();
    auto pb = orig.named_params();
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i)
      for (int64_t k = 0; k < pa[i].second->val.numel(); ++k)
        CHECK(pa[i].second->val[k] == pb[i].second->val[k]);
  }
  fs::remove_all(dir);
}

TEST_CASE("non-finite loss aborts with batch diagnostics") {
  fs::path dir = fs::temp_directory_path() / "kws_nan_test";
  fs::remove_all(dir);
  TinySetup s = tiny_setup();
  s.synth_cfg.train_words = 2;
  SynthCorpus corpus = generate_synthetic_corpus(s.synth_cfg, (dir / "data").string());
  Vocabulary vocab = build_vocabulary(corpus.records, 1000);
  SegmentLoader loader(vocab, (dir / "data").string());
  auto train = load_split(loader, corpus.records, "train");

  TrainModel model("train", 7, s.model_cfg, s.loss_cfg, vocab.size(),
                   static_cast<int64_t>(vocab.speakers.size()),
                   static_cast<int64_t>(vocab.phonemes.size()));
  // poison one parameter so the forward pass goes non-finite
  model.named_params()[0].second->val[0] =
      std::numeric_limits<double>::quiet_NaN();
  TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 4;
  tc.lr_min = 1e-6;
  tc.lr_max = 1e-3;
  tc.half_cycle_steps = 10;
  Trainer trainer(model, vocab, tc, (dir / "run").string());
  CHECK_THROWS_AS(trainer.run(train.examples, {}), NumericError);
  fs::remove_all(dir);
}
