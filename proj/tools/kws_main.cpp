// Copyright 2025 The qbkws Authors
//
// Licensed under the Apache License, Version 2.0
//
// Command-line entry points: prepare, train, evaluate, plot-det, profile.
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
// failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "kws/config.hpp"
#include "kws/evaluation.hpp"
#include "kws/profiling.hpp"
#include "kws/synth.hpp"
#include "kws/training.hpp"

namespace fs = std::filesystem;
using namespace kws;

namespace {

struct ManifestSet {
  std::vector<ManifestRecord> train, dev, eval_positive, eval_negative;
};

void write_manifests(const std::string& dir,
                     const std::vector<ManifestRecord>& records) {
  ManifestSet set;
  for (const auto& r : records) {
    if (r.split == "train") set.train.push_back(r);
    else if (r.split == "dev") set.dev.push_back(r);
    else if (r.split == "eval-positive") set.eval_positive.push_back(r);
    else set.eval_negative.push_back(r);
  }
  write_manifest(dir + "/train.jsonl", set.train);
  write_manifest(dir + "/dev.jsonl", set.dev);
  write_manifest(dir + "/eval_positive.jsonl", set.eval_positive);
  write_manifest(dir + "/eval_negative.jsonl", set.eval_negative);
}

std::vector<ManifestRecord> read_manifest_dir(const std::string& dir) {
  std::vector<ManifestRecord> all;
  for (const char* name : {"train.jsonl", "dev.jsonl", "eval_positive.jsonl",
                           "eval_negative.jsonl"}) {
    std::string path = dir + "/" + std::string(name);
    if (fs::exists(path)) {
      auto part = read_manifest(path);
      all.insert(all.end(), part.begin(), part.end());
    }
  }
  check_data(!all.empty(), "no manifest records under " + dir);
  return all;
}

int cmd_prepare(const std::string& out_dir, bool synthetic,
                const std::string& from_segments, const SynthConfig& synth_cfg,
                int64_t vocab_top, double dev_fraction) {
  std::vector<ManifestRecord> records;
  if (synthetic) {
    records = generate_synthetic_corpus(synth_cfg, out_dir).records;
  } else {
    check_config(!from_segments.empty(),
                 "prepare needs --synthetic or --from-segments");
    auto catalog = read_manifest(from_segments);
    check_data(!catalog.empty(), "segment catalog is empty: " + from_segments);
    std::vector<std::string> problems;
    for (const auto& r : catalog) {
      if (r.word.empty())
        problems.push_back(r.audio_path + ": missing word");
      if (r.speaker_id.empty() && r.split != "eval-negative")
        problems.push_back(r.audio_path + ": missing speaker_id");
      if (r.phonemes.empty() && r.split == "train" && r.word != kSilenceWord)
        problems.push_back(r.audio_path + ": missing phoneme alignment");
    }
    if (!problems.empty()) {
      for (const auto& p : problems) std::cerr << "[prepare] " << p << "\n";
      throw DataError("segment catalog has " +
                      std::to_string(problems.size()) + " invalid records");
    }
    for (auto r : catalog) {
      if (r.split == "train" || r.split == "dev") {
        double u = static_cast<double>(fnv1a(r.audio_path) % 10000) / 10000.0;
        r.split = u < dev_fraction ? "dev" : "train";
      }
      records.push_back(std::move(r));
    }
    fs::create_directories(out_dir);
  }
  write_manifests(out_dir, records);
  Vocabulary vocab = build_vocabulary(records, vocab_top);
  vocab.save(out_dir + "/vocab.json");
  std::cout << "prepared " << records.size() << " records under " << out_dir
            << " (vocabulary: " << vocab.size() << " word classes, "
            << vocab.speakers.size() << " speakers, " << vocab.phonemes.size()
            << " phonemes)\n";
  return 0;
}

struct LoadedSplits {
  Vocabulary vocab;
  std::vector<ManifestRecord> records;
  LoadedDataset train, dev;
};

LoadedSplits load_training_data(const RunConfig& cfg) {
  check_config(!cfg.manifest_dir.empty(), "config.manifest_dir is required");
  LoadedSplits out;
  out.vocab = Vocabulary::load(cfg.manifest_dir + "/vocab.json");
  out.records = read_manifest_dir(cfg.manifest_dir);
  SegmentLoader loader(out.vocab, cfg.manifest_dir);
  out.train = load_split(loader, out.records, "train");
  out.dev = load_split(loader, out.records, "dev");
  check_data(!out.train.examples.empty(), "no loadable training examples");
  return out;
}

int cmd_train(const RunConfig& cfg, const std::optional<std::string>& resume) {
  LoadedSplits data = load_training_data(cfg);
  std::string out_dir = cfg.resolved_output_dir();
  fs::create_directories(out_dir);
  {
    std::ofstream f(out_dir + "/config.json");
    f << cfg.to_json().dump(2) << "\n";
  }
  TrainModel model("train", cfg.seed, cfg.model, cfg.loss, data.vocab.size(),
                   static_cast<int64_t>(data.vocab.speakers.size()),
                   static_cast<int64_t>(data.vocab.phonemes.size()));
  std::cerr << "[train] model parameters: " << model.param_count() << "\n";
  Trainer trainer(model, data.vocab, cfg.train, out_dir);
  TrainResult res = trainer.run(data.train.examples, data.dev.examples, resume);
  std::cout << "trained " << res.steps << " steps; best dev word error "
            << res.best_dev_word_err << "; final checkpoint "
            << res.final_checkpoint << "\n";
  return 0;
}

nlohmann::json curve_json(const DETCurve& curve, const std::string& label) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : curve.points)
    points.push_back({p.threshold, p.fa_per_hour, p.frr});
  return nlohmann::json{{"label", label},
                        {"negative_hours", curve.negative_hours},
                        {"deduplicated", curve.deduplicated},
                        {"points", points}};
}

int cmd_evaluate(const RunConfig& cfg, const std::string& checkpoint_path,
                 const std::string& out_override) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  // the checkpoint's embedded architecture is authoritative; a conflicting
  // config is an error naming both sides
  if (cfg.model.encoder.family != ckpt.model_cfg.encoder.family ||
      cfg.model.pooling.kind != ckpt.model_cfg.pooling.kind ||
      cfg.model.pooling.embedding_dim != ckpt.model_cfg.pooling.embedding_dim) {
    throw ConfigError(
        "checkpoint/config mismatch: checkpoint has " +
        family_name(ckpt.model_cfg.encoder.family) + "/" +
        ckpt.model_cfg.pooling.kind + " d=" +
        std::to_string(ckpt.model_cfg.pooling.embedding_dim) +
        ", config requests " + family_name(cfg.model.encoder.family) + "/" +
        cfg.model.pooling.kind + " d=" +
        std::to_string(cfg.model.pooling.embedding_dim));
  }
  check_config(!cfg.manifest_dir.empty(), "config.manifest_dir is required");

  EmbeddingModel model("train.model", cfg.seed, ckpt.model_cfg);
  restore_module(model, ckpt);
  SegmentLoader loader(ckpt.vocab, cfg.manifest_dir);
  auto records = read_manifest_dir(cfg.manifest_dir);

  std::string out_dir =
      out_override.empty() ? cfg.resolved_output_dir() + "/eval" : out_override;
  fs::create_directories(out_dir);
  EvalOutcome outcome = evaluate_qbye(model, loader, records, cfg.eval,
                                      out_dir + "/scores.jsonl");

  {
    std::ofstream f(out_dir + "/det_window.json");
    f << curve_json(outcome.window_curve, "per-window").dump() << "\n";
  }
  {
    std::ofstream f(out_dir + "/det_event.json");
    f << curve_json(outcome.event_curve, "events").dump() << "\n";
  }
  nlohmann::json summary{
      {"keywords", outcome.num_keywords},
      {"positive_trials", outcome.num_positive_trials},
      {"negative_windows", outcome.num_negative_windows},
      {"negative_keyword_hours", outcome.negative_keyword_hours},
      {"target_fa_per_hour", cfg.eval.target_fa_per_hour},
      {"within_word_similarity", outcome.within_word_similarity},
      {"cross_word_similarity", outcome.cross_word_similarity}};
  if (outcome.frr_window) summary["frr_per_window"] = *outcome.frr_window;
  if (outcome.frr_event) summary["frr_event"] = *outcome.frr_event;
  {
    std::ofstream f(out_dir + "/summary.json");
    f << summary.dump(2) << "\n";
  }
  std::cout << "evaluated " << outcome.num_positive_trials
            << " positive trials / " << outcome.num_negative_windows
            << " negative windows over " << outcome.num_keywords
            << " keywords (" << outcome.negative_keyword_hours
            << " keyword-hours)\n";
  auto show = [&](const char* name, const std::optional<double>& v) {
    std::cout << "  FRR @ " << cfg.eval.target_fa_per_hour << "/hr ["
              << name << "]: ";
    if (v)
      std::cout << *v * 100.0 << "%\n";
    else
      std::cout << "target FA outside achievable range\n";
  };
  show("per-window", outcome.frr_window);
  show("events", outcome.frr_event);
  std::cout << "  within-word similarity " << outcome.within_word_similarity
            << ", cross-word " << outcome.cross_word_similarity << "\n";
  return 0;
}

int cmd_plot_det(const std::vector<std::string>& tables,
                 const std::string& out_path) {
  check_config(!tables.empty(), "plot-det needs at least one DET table");
  struct CurveData {
    std::string label;
    std::vector<std::pair<double, double>> pts;  // (fa, frr)
  };
  std::vector<CurveData> curves;
  double max_fa = 0.0, max_frr = 0.0;
  for (const auto& path : tables) {
    std::ifstream in(path);
    check_data(in.good(), "cannot open DET table: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ": invalid DET table: " + e.what());
    }
    CurveData c;
    c.label = j.value("label", path);
    for (const auto& p : j.at("points")) {
      double fa = p.at(1).get<double>();
      double frr = p.at(2).get<double>();
      c.pts.emplace_back(fa, frr);
      max_fa = std::max(max_fa, fa);
      max_frr = std::max(max_frr, frr);
    }
    curves.push_back(std::move(c));
  }
  max_fa = std::max(max_fa, 1e-6);
  max_frr = std::max(max_frr, 1e-6);

  const double w = 640, h = 480, ml = 70, mb = 50, mt = 20, mr = 20;
  auto x_of = [&](double fa) { return ml + (w - ml - mr) * fa / max_fa; };
  auto y_of = [&](double frr) { return h - mb - (h - mb - mt) * frr / max_frr; };
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b"};
  std::string svg;
  char buf[256];
  svg += "<svg xmlns='http://www.w3.org/2000/svg' width='640' height='480'>\n";
  svg += "<rect width='640' height='480' fill='white'/>\n";
  snprintf(buf, sizeof(buf),
           "<line x1='%.1f' y1='%.1f' x2='%.1f' y2='%.1f' stroke='black'/>\n",
           ml, h - mb, w - mr, h - mb);
  svg += buf;
  snprintf(buf, sizeof(buf),
           "<line x1='%.1f' y1='%.1f' x2='%.1f' y2='%.1f' stroke='black'/>\n",
           ml, mt, ml, h - mb);
  svg += buf;
  for (int i = 0; i <= 5; ++i) {
    double fa = max_fa * i / 5.0;
    snprintf(buf, sizeof(buf),
             "<text x='%.1f' y='%.1f' font-size='12' text-anchor='middle'>"
             "%.2f</text>\n",
             x_of(fa), h - mb + 18, fa);
    svg += buf;
    double frr = max_frr * i / 5.0;
    snprintf(buf, sizeof(buf),
             "<text x='%.1f' y='%.1f' font-size='12' text-anchor='end'>"
             "%.1f</text>\n",
             ml - 6, y_of(frr) + 4, frr * 100.0);
    svg += buf;
  }
  svg += "<text x='350' y='472' font-size='13' text-anchor='middle'>"
         "False accepts per hour</text>\n";
  svg += "<text x='16' y='250' font-size='13' text-anchor='middle' "
         "transform='rotate(-90 16 250)'>False reject rate (%)</text>\n";
  for (size_t c = 0; c < curves.size(); ++c) {
    std::string pts;
    for (const auto& [fa, frr] : curves[c].pts) {
      snprintf(buf, sizeof(buf), "%.2f,%.2f ", x_of(fa), y_of(frr));
      pts += buf;
    }
    snprintf(buf, sizeof(buf),
             "<polyline points='%s' fill='none' stroke='%s' stroke-width='1.5'/>\n",
             pts.c_str(), colors[c % 6]);
    svg += buf;
    snprintf(buf, sizeof(buf),
             "<text x='%.1f' y='%.1f' font-size='12' fill='%s'>%s</text>\n",
             w - mr - 180.0, mt + 18.0 * (c + 1), colors[c % 6],
             curves[c].label.c_str());
    svg += buf;
  }
  svg += "</svg>\n";
  std::ofstream out(out_path);
  check_data(out.good(), "cannot write plot: " + out_path);
  out << svg;
  std::cout << "wrote " << out_path << " with " << curves.size()
            << " curve(s)\n";
  return 0;
}

int cmd_profile(const std::optional<RunConfig>& cfg, bool paper_set,
                bool detail) {
  auto print_row = [](const std::string& name, const CostReport& r) {
    char buf[128];
    snprintf(buf, sizeof(buf), "%-12s %10ld params %12.1f MFLOPs\n",
             name.c_str(), static_cast<long>(r.param_count()),
             r.flops() / 1e6);
    std::cout << buf;
  };
  if (paper_set) {
    for (EncoderFamily f : {EncoderFamily::kEcapaTdnn, EncoderFamily::kConformer,
                            EncoderFamily::kLiconet}) {
      ModelConfig mc;
      mc.encoder.family = f;
      mc.pooling.kind = "asp";
      mc.pooling.asp_context = f == EncoderFamily::kEcapaTdnn;
      print_row(family_name(f), profile_model(mc));
    }
  } else {
    check_config(cfg.has_value(), "profile needs --config or --paper-set");
    CostReport r = profile_model(cfg->model);
    print_row(family_name(cfg->model.encoder.family), r);
    if (detail) {
      for (const auto& l : r.layers) {
        char buf[160];
        snprintf(buf, sizeof(buf), "  %-28s %10ld params %12.3f MFLOPs (T=%ld)\n",
                 l.name.c_str(), static_cast<long>(l.params), l.flops / 1e6,
                 static_cast<long>(l.frames_out));
        std::cout << buf;
      }
    }
  }
  std::cout << "counts cover encoder + pooler + projection on a 2 s input; "
               "classifier heads excluded; 2xMAC convention, per-utterance "
               "terms counted once\n";
  return 0;
}

RunConfig load_config_with_overrides(const std::string& path,
                                     const std::vector<std::string>& sets) {
  nlohmann::json doc = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    check_config(in.good(), "cannot open config file: " + path);
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path + ": invalid JSON: " + e.what());
    }
  }
  for (const auto& s : sets) apply_override(doc, s);
  return RunConfig::from_json(doc);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"query-by-example keyword spotting"};
  app.require_subcommand(1);

  // prepare
  auto* prepare = app.add_subcommand("prepare", "build manifests and vocabulary");
  std::string prep_out, from_segments;
  bool synthetic = false;
  SynthConfig synth_cfg;
  int64_t vocab_top = 1000;
  double dev_fraction = 0.1;
  prepare->add_option("--out", prep_out, "output directory")->required();
  prepare->add_flag("--synthetic", synthetic, "generate the built-in corpus");
  prepare->add_option("--from-segments", from_segments,
                      "segment catalog (jsonl) with alignments");
  prepare->add_option("--seed", synth_cfg.seed, "corpus seed");
  prepare->add_option("--train-words", synth_cfg.train_words, "");
  prepare->add_option("--heldout-words", synth_cfg.heldout_words, "");
  prepare->add_option("--speakers", synth_cfg.speakers, "");
  prepare->add_option("--train-per-cell", synth_cfg.train_per_cell, "");
  prepare->add_option("--dev-per-cell", synth_cfg.dev_per_cell, "");
  prepare->add_option("--eval-per-cell", synth_cfg.eval_per_cell, "");
  prepare->add_option("--negative-streams", synth_cfg.negative_streams, "");
  prepare->add_option("--negative-seconds", synth_cfg.negative_stream_seconds, "");
  prepare->add_option("--vocab-top", vocab_top, "vocabulary size cutoff");
  prepare->add_option("--dev-fraction", dev_fraction, "");

  // shared config options
  auto add_config_opts = [](CLI::App* cmd, std::string* config_path,
                            std::vector<std::string>* sets) {
    cmd->add_option("--config", *config_path, "run config (json)");
    cmd->add_option("--set", *sets, "override, dotted path: a.b.c=value");
  };

  // train
  auto* train = app.add_subcommand("train", "train a model");
  std::string train_config;
  std::vector<std::string> train_sets;
  std::string resume, encoder_flag, pool_flag, loss_flag, out_flag, data_flag;
  int epochs_flag = -1;
  double scale_flag = -1.0;
  add_config_opts(train, &train_config, &train_sets);
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--encoder", encoder_flag, "liconet|conformer|ecapa_tdnn");
  train->add_option("--pool", pool_flag, "asp|gap");
  train->add_option("--loss", loss_flag,
                    "ce|aam|softtriple|hybrid-aam|hybrid-softtriple");
  train->add_option("--epochs", epochs_flag, "");
  train->add_option("--scale", scale_flag, "width multiplier");
  train->add_option("--out", out_flag, "output directory");
  train->add_option("--data", data_flag, "manifest directory");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "QbyE detection metrics");
  std::string eval_config, eval_ckpt, eval_out;
  std::vector<std::string> eval_sets;
  add_config_opts(evaluate, &eval_config, &eval_sets);
  evaluate->add_option("--checkpoint", eval_ckpt, "trained checkpoint")
      ->required();
  evaluate->add_option("--out", eval_out, "output directory");

  // plot-det
  auto* plot = app.add_subcommand("plot-det", "overlay DET curves as svg");
  std::vector<std::string> tables;
  std::string plot_out = "det.svg";
  plot->add_option("tables", tables, "DET table json files")->required();
  plot->add_option("--out", plot_out, "output svg path");

  // profile
  auto* profile = app.add_subcommand("profile", "parameter/FLOP report");
  std::string prof_config;
  std::vector<std::string> prof_sets;
  bool paper_set = false, detail = false;
  add_config_opts(profile, &prof_config, &prof_sets);
  profile->add_flag("--paper-set", paper_set, "all three reference encoders");
  profile->add_flag("--detail", detail, "per-layer breakdown");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*prepare) {
      return cmd_prepare(prep_out, synthetic, from_segments, synth_cfg,
                         vocab_top, dev_fraction);
    }
    if (*train) {
      if (!encoder_flag.empty())
        train_sets.push_back("model.encoder.family=" + encoder_flag);
      if (!pool_flag.empty())
        train_sets.push_back("model.pooling.kind=" + pool_flag);
      if (!loss_flag.empty()) {
        if (loss_flag == "ce" || loss_flag == "aam" || loss_flag == "softtriple") {
          train_sets.push_back("loss.word_loss=" + loss_flag);
          train_sets.push_back("loss.speaker_weight=0");
          train_sets.push_back("loss.phoneme_weight=0");
        } else if (loss_flag == "hybrid-aam") {
          train_sets.push_back("loss.word_loss=aam");
        } else if (loss_flag == "hybrid-softtriple") {
          train_sets.push_back("loss.word_loss=softtriple");
        } else {
          throw ConfigError("unknown --loss '" + loss_flag + "'");
        }
      }
      if (epochs_flag >= 0)
        train_sets.push_back("train.epochs=" + std::to_string(epochs_flag));
      if (scale_flag > 0)
        train_sets.push_back("model.encoder.scale=" + std::to_string(scale_flag));
      if (!out_flag.empty()) train_sets.push_back("output_dir=" + out_flag);
      if (!data_flag.empty()) train_sets.push_back("manifest_dir=" + data_flag);
      RunConfig cfg = load_config_with_overrides(train_config, train_sets);
      return cmd_train(cfg, resume.empty()
                                ? std::nullopt
                                : std::make_optional(resume));
    }
    if (*evaluate) {
      RunConfig cfg = load_config_with_overrides(eval_config, eval_sets);
      return cmd_evaluate(cfg, eval_ckpt, eval_out);
    }
    if (*plot) return cmd_plot_det(tables, plot_out);
    if (*profile) {
      std::optional<RunConfig> cfg;
      if (!prof_config.empty() || !prof_sets.empty())
        cfg = load_config_with_overrides(prof_config, prof_sets);
      return cmd_profile(cfg, paper_set, detail);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
