/* Copyright 2026 The SER-Forge Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// ser_forge: command-line front end.
//
//   split          assign train/val/test to a manifest (80/10/10, seeded)
//   synth          generate a synthetic emotional-speech corpus
//   featurize      write the model input of one WAV to a SERF tensor file
//   train          train or fine-tune a checkpoint on a manifest
//   swap-head      replace a checkpoint's classification head
//   eval           metrics of a checkpoint on one split of a manifest
//   predict        label + class probabilities for one WAV
//   run-experiment the scratch and transfer experiments end to end
//
// Exit codes: 0 success, 2 usage/validation, 3 numerical failure, 4 I/O.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "serforge/checkpoint.hpp"
#include "serforge/data.hpp"
#include "serforge/evaluation.hpp"
#include "serforge/experiment.hpp"
#include "serforge/features.hpp"
#include "serforge/pipeline.hpp"
#include "serforge/runtime.hpp"
#include "serforge/training.hpp"

namespace fs = std::filesystem;
using namespace serforge;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitIo = 4;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kIo: return kExitIo;
    case ErrorKind::kNumerical: return kExitNumerical;
    default: return kExitUsage;
  }
}

Json read_json_file(const std::string& path) {
  auto bytes = read_file_bytes(path);
  try {
    return Json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, path + ": invalid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path.string(), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void make_dirs(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create " + dir + ": " + ec.message());
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}

template <typename T>
std::vector<T> parse_list(const std::string& csv, const std::function<T(const std::string&)>& conv) {
  std::vector<T> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(conv(item));
  }
  return out;
}

LabelSet labels_from_json(const Json& j) {
  if (j.is_string()) return LabelSet::parse(j.get<std::string>());
  if (j.is_array()) return LabelSet(j.get<std::vector<std::string>>());
  fail(ErrorKind::kConfig, "labels: expected a preset name or a list of names");
}

void apply_synth_json(const Json& j, SynthSpec& s) {
  using json_detail::read_field;
  json_detail::reject_unknown(j,
                              {"labels", "clips_per_class", "domain", "class_ratio", "am_rates", "min_seconds",
                               "max_seconds", "sample_rate", "harmonics", "speakers"},
                              "synth");
  if (j.contains("labels")) s.labels = labels_from_json(j["labels"]);
  read_field(j, "clips_per_class", s.clips_per_class, "synth");
  if (j.contains("domain")) {
    const auto& d = j["domain"];
    if (d.is_string()) {
      const auto name = d.get<std::string>();
      if (name == "SRC") {
        s.domain = SynthDomain::src();
      } else if (name == "TGT") {
        s.domain = SynthDomain::tgt();
      } else {
        fail(ErrorKind::kConfig, "synth.domain: expected SRC, TGT or an object");
      }
    } else {
      json_detail::reject_unknown(d, {"name", "base_hz", "snr_db", "noise"}, "synth.domain");
      read_field(d, "name", s.domain.name, "synth.domain");
      read_field(d, "base_hz", s.domain.base_hz, "synth.domain");
      read_field(d, "snr_db", s.domain.snr_db, "synth.domain");
      if (d.contains("noise")) {
        std::string n;
        read_field(d, "noise", n, "synth.domain");
        if (n != "white" && n != "brown") fail(ErrorKind::kConfig, "synth.domain.noise: expected white or brown");
        s.domain.noise = n == "white" ? NoiseColor::kWhite : NoiseColor::kBrown;
      }
    }
  }
  read_field(j, "class_ratio", s.class_ratio, "synth");
  read_field(j, "am_rates", s.am_rates, "synth");
  read_field(j, "min_seconds", s.min_seconds, "synth");
  read_field(j, "max_seconds", s.max_seconds, "synth");
  read_field(j, "sample_rate", s.sample_rate, "synth");
  read_field(j, "harmonics", s.harmonics, "synth");
  read_field(j, "speakers", s.speakers, "synth");
}

Split parse_split_arg(const std::string& s) {
  auto sp = parse_split(s);
  if (!sp || *sp == Split::kUnassigned) fail(ErrorKind::kConfig, "split must be train, val or test");
  return *sp;
}

// ---- subcommands ----

struct SplitArgs {
  std::string manifest, out, labels = "SHEMO6", ratios = "0.8,0.1,0.1";
  std::uint64_t seed = 0;
  bool stratified = false, aliases = false;
};

int cmd_split(const SplitArgs& a) {
  const auto aliases = default_label_aliases();
  auto m = load_manifest(a.manifest, LabelSet::parse(a.labels), a.aliases ? &aliases : nullptr);
  auto r = parse_list<double>(a.ratios, [](const std::string& s) { return std::stod(s); });
  if (r.size() != 3) fail(ErrorKind::kConfig, "--ratios needs three comma-separated values");
  auto out = split(std::move(m), SplitRatios{r[0], r[1], r[2]}, a.seed, a.stratified);
  save_manifest(out, a.out);
  const auto c = count_splits(out);
  std::cout << "train " << c.train << "\nval " << c.val << "\ntest " << c.test << "\n";
  return kExitOk;
}

struct SynthArgs {
  std::string out, spec, domain, labels;
  std::uint64_t seed = 0;
  std::size_t clips_per_class = 40;
};

int cmd_synth(const SynthArgs& a, const CLI::Option* clips_opt) {
  SynthSpec spec;
  if (!a.spec.empty()) apply_synth_json(read_json_file(a.spec), spec);
  if (!a.domain.empty()) apply_synth_json(Json{{"domain", a.domain}}, spec);
  if (!a.labels.empty()) spec.labels = LabelSet::parse(a.labels);
  if (clips_opt->count()) spec.clips_per_class = a.clips_per_class;
  auto m = synth_corpus(spec, a.seed, a.out);
  std::cout << "wrote " << m.size() << " clips and " << (fs::path(a.out) / "manifest.csv").string() << "\n";
  return kExitOk;
}

struct FeaturizeArgs {
  std::string wav, out, pathway = "spectrogram", config;
};

int cmd_featurize(const FeaturizeArgs& a) {
  SpectrogramConfig sc;
  if (!a.config.empty()) {
    Json j = read_json_file(a.config);
    apply_json(j.contains("spectrogram") ? j["spectrogram"] : j, sc);
  }
  const Pathway pw = parse_pathway(a.pathway);
  FeatureExtractor fx(pw, sc);
  const AudioClip clip = read_wav_file(a.wav);
  Json header{{"kind", "features"},
               {"pathway", std::string(pathway_name(pw))},
               {"source", fs::path(a.wav).filename().string()},
               {"sample_rate", kModelSampleRate}};
  std::vector<NamedTensor> tensors;
  if (pw == Pathway::kSpectrogram) {
    header["spectrogram_config"] = to_json(sc);
    auto mel = fx.mel(clip);
    tensors.push_back({"log_mel", BasicTensor<float>(Shape{mel.mel_bins, mel.frames}, std::move(mel.values))});
  } else {
    auto wave = normalize_waveform(condition_clip(clip).samples);
    const std::size_t n = wave.size();
    tensors.push_back({"waveform", BasicTensor<float>(Shape{n}, std::move(wave))});
  }
  write_file_bytes(a.out, write_container(std::move(header), tensors));
  std::cout << "wrote " << tensors[0].name << " " << shape_string(tensors[0].tensor.shape()) << " to " << a.out << "\n";
  return kExitOk;
}

struct TrainArgs {
  std::string config, manifest, labels = "SHEMO6", pathway = "raw_audio", init_from, out = "run";
  TrainConfig train;
  double dropout = 0.1;
  bool aliases = false, quiet = false;
};

int cmd_train(TrainArgs a, const CLI::App& sub) {
  auto given = [&](const char* name) { return sub.get_option(name)->count() > 0; };
  Json model_json = Json::object(), spec_json = Json::object();
  bool pathway_set = given("--pathway");
  if (!a.config.empty()) {
    Json j = read_json_file(a.config);
    json_detail::reject_unknown(j, {"pathway", "labels", "manifest", "init_from", "out", "aliases", "model", "train", "spectrogram"},
                                "config");
    auto take = [&](const char* key, const char* flag, std::string& dst) {
      if (j.contains(key) && !given(flag)) json_detail::read_field(j, key, dst, "config");
    };
    take("pathway", "--pathway", a.pathway);
    pathway_set = pathway_set || j.contains("pathway");
    take("manifest", "--manifest", a.manifest);
    take("init_from", "--init-from", a.init_from);
    take("out", "--out", a.out);
    if (j.contains("labels") && !given("--labels")) a.labels = labels_from_json(j["labels"]).joined();
    if (j.contains("aliases") && !given("--aliases")) json_detail::read_field(j, "aliases", a.aliases, "config");
    if (j.contains("model")) model_json = j["model"];
    if (j.contains("spectrogram")) spec_json = j["spectrogram"];
    if (j.contains("train")) {
      TrainConfig from_file;
      apply_json(j["train"], from_file);
      // Flags given on the command line win over the file.
      TrainConfig merged = from_file;
      if (given("--epochs")) merged.epochs = a.train.epochs;
      if (given("--batch-size")) merged.batch_size = a.train.batch_size;
      if (given("--lr")) merged.learning_rate = a.train.learning_rate;
      if (given("--weight-decay")) merged.weight_decay = a.train.weight_decay;
      if (given("--seed")) merged.seed = a.train.seed;
      if (given("--patience")) merged.early_stop_patience = a.train.early_stop_patience;
      if (given("--class-weights")) merged.class_weights = a.train.class_weights;
      a.train = merged;
    }
  }
  if (a.manifest.empty()) fail(ErrorKind::kConfig, "train: --manifest is required");
  if (!fs::exists(a.manifest)) fail(ErrorKind::kConfig, "train: manifest " + a.manifest + " does not exist");
  a.train.validate();
  const LabelSet labels = LabelSet::parse(a.labels);

  Checkpoint start;
  if (!a.init_from.empty()) {
    if (!fs::exists(a.init_from)) fail(ErrorKind::kConfig, "train: --init-from " + a.init_from + " does not exist");
    start = load_checkpoint(a.init_from);
    if (!(start.labels() == labels)) {
      fail(ErrorKind::kLabel, "checkpoint labels {" + start.labels().joined() + "} differ from --labels {" +
                                  labels.joined() + "}; run swap-head first");
    }
    if (pathway_set && parse_pathway(a.pathway) != start.config().pathway) {
      fail(ErrorKind::kConfig, "--pathway " + a.pathway + " conflicts with the checkpoint's " +
                                   std::string(pathway_name(start.config().pathway)) + " model");
    }
    ModelConfig changed = start.config();
    apply_json(model_json, changed);
    if (given("--dropout")) changed.dropout = a.dropout;
    ModelConfig only_dropout = start.config();
    only_dropout.dropout = changed.dropout;
    if (!(changed == only_dropout)) fail(ErrorKind::kConfig, "only model.dropout may change when fine-tuning");
    start.model.config.dropout = changed.dropout;
    if (!spec_json.empty()) fail(ErrorKind::kConfig, "spectrogram settings come from the checkpoint when fine-tuning");
  } else {
    ModelConfig mc = ModelConfig::defaults(parse_pathway(a.pathway), labels.size());
    mc.seed = a.train.seed;
    mc.dropout = a.dropout;
    apply_json(model_json, mc);
    if (given("--dropout")) mc.dropout = a.dropout;
    mc.n_classes = labels.size();
    SpectrogramConfig sc;
    apply_json(spec_json, sc);
    start = initial_checkpoint(mc, labels, sc);
  }

  const auto aliases = default_label_aliases();
  auto manifest = load_manifest(a.manifest, labels, a.aliases ? &aliases : nullptr);
  const Corpus corpus = Corpus::load(std::move(manifest));
  const FeatureCache cache(corpus, start.config().pathway, start.spectrogram);
  auto on_epoch = [&](const EpochRecord& r) {
    if (!a.quiet) {
      std::cerr << "epoch " << r.epoch << "  train_loss " << fixed(r.train_loss) << "  val_accuracy "
                << fixed(r.val_accuracy) << std::endl;
    }
  };
  auto run = train_run(start, corpus, cache, a.train, fs::path(a.manifest).filename().string(), on_epoch);

  make_dirs(a.out);
  save_checkpoint(run.checkpoint, (fs::path(a.out) / "checkpoint.serf").string());
  write_text(fs::path(a.out) / "history.json", history_json(run.history).dump(1) + "\n");
  std::cout << "best epoch " << run.best_epoch << ", val accuracy " << fixed(run.best_val_accuracy) << "\n"
            << "wrote " << (fs::path(a.out) / "checkpoint.serf").string() << "\n";
  return kExitOk;
}

struct SwapArgs {
  std::string in, out, labels = "SHEMO6";
  std::uint64_t seed = 0;
};

int cmd_swap_head(const SwapArgs& a) {
  auto out = head_swap(load_checkpoint(a.in), LabelSet::parse(a.labels), a.seed);
  save_checkpoint(out, a.out);
  std::cout << "head " << out.config().n_classes << "x" << out.config().d_model << " {" << out.labels().joined()
            << "} -> " << a.out << "\n";
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, manifest, split = "test", out = "eval";
  bool aliases = false;
};

int cmd_eval(const EvalArgs& a) {
  const Split split = parse_split_arg(a.split);
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const auto aliases = default_label_aliases();
  const Corpus corpus = Corpus::load(load_manifest(a.manifest, ckpt.labels(), a.aliases ? &aliases : nullptr));
  const FeatureCache cache(corpus, ckpt.config().pathway, ckpt.spectrogram);
  const auto ev = evaluate_run(ckpt, corpus, cache, split);
  make_dirs(a.out);
  write_text(fs::path(a.out) / "metrics.json", metrics_json(ev.metrics, ckpt.labels()).dump(1) + "\n");
  const std::string table = confusion_table(ev.confusion, ckpt.labels());
  write_text(fs::path(a.out) / "confusion.txt", table);
  std::cout << "accuracy " << fixed(ev.metrics.accuracy) << "  balanced_accuracy "
            << fixed(ev.metrics.balanced_accuracy) << "  macro_f1 " << fixed(ev.metrics.macro_f1) << "  n "
            << ev.metrics.n_examples << "\n"
            << table;
  return kExitOk;
}

struct PredictArgs {
  std::string checkpoint, wav;
};

int cmd_predict(const PredictArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const auto p = predict_probabilities(ckpt, read_wav_file(a.wav));
  const std::size_t best = argmax<double>(p);
  std::cout << ckpt.labels().name(best) << "\n";
  for (std::size_t i = 0; i < p.size(); ++i) {
    std::cout << "  " << std::left << std::setw(12) << ckpt.labels().name(i) << std::right << fixed(p[i]) << "\n";
  }
  return kExitOk;
}

struct ExperimentArgs {
  std::string config, out = "experiment", seeds = "1,2,3,4,5", pathways = "raw_audio,spectrogram";
  std::size_t stage2_epochs = 8, clips_per_class = 50, epochs = 30;
  std::uint64_t corpus_seed = 2026;
  bool scratch_only = false, transfer_only = false;
};

std::string experiment_summary(const Json& r) {
  std::ostringstream o;
  if (r.contains("experiment1")) {
    o << "Experiment 1: training from scratch on the six-class corpus (test accuracy)\n";
    for (const auto& [pw, res] : r["experiment1"].items()) {
      o << "  " << std::left << std::setw(12) << pw << std::right;
      for (const auto& run : res["runs"]) o << "  " << fixed(run["test"]["accuracy"].get<double>(), 3);
      o << "   (" << res["seeds_at_or_above_0.90"].get<int>() << "/" << res["runs"].size() << " seeds >= 0.90)\n";
    }
  }
  if (r.contains("experiment2")) {
    o << "Experiment 2: source pre-training + head swap vs. scratch on the target corpus\n";
    for (const auto& [pw, res] : r["experiment2"].items()) {
      o << "  " << pw << ": max zero-shot test " << fixed(res["max_zero_shot_test_accuracy"].get<double>(), 3)
        << ", transfer val >= scratch in " << res["seeds_transfer_val_at_least_scratch"].get<int>() << "/"
        << res["runs"].size() << " seeds, mean test transfer "
        << fixed(res["mean_transfer_test_accuracy"].get<double>(), 3) << " vs scratch "
        << fixed(res["mean_scratch_test_accuracy"].get<double>(), 3) << "\n";
    }
  }
  return o.str();
}

int cmd_run_experiment(const ExperimentArgs& a, const CLI::App& sub) {
  auto given = [&](const char* name) { return sub.get_option(name)->count() > 0; };
  ExperimentConfig cfg;
  if (!a.config.empty()) {
    Json j = read_json_file(a.config);
    json_detail::reject_unknown(j, {"seeds", "pathways", "corpus_seed", "clips_per_class", "src_clips_per_class",
                                    "train", "stage2_epochs", "dropout"},
                                "experiment");
    json_detail::read_field(j, "seeds", cfg.seeds, "experiment");
    if (j.contains("pathways")) {
      cfg.pathways.clear();
      for (const auto& p : j["pathways"]) cfg.pathways.push_back(parse_pathway(p.get<std::string>()));
    }
    json_detail::read_field(j, "corpus_seed", cfg.corpus_seed, "experiment");
    json_detail::read_field(j, "clips_per_class", cfg.clips_per_class, "experiment");
    json_detail::read_field(j, "src_clips_per_class", cfg.src_clips_per_class, "experiment");
    json_detail::read_field(j, "stage2_epochs", cfg.stage2_epochs, "experiment");
    json_detail::read_field(j, "dropout", cfg.dropout, "experiment");
    if (j.contains("train")) apply_json(j["train"], cfg.train);
  }
  if (given("--seeds") || a.config.empty()) {
    cfg.seeds = parse_list<std::uint64_t>(a.seeds, [](const std::string& s) { return std::stoull(s); });
  }
  if (given("--pathways") || a.config.empty()) {
    cfg.pathways = parse_list<Pathway>(a.pathways, [](const std::string& s) { return parse_pathway(s); });
  }
  if (given("--stage2-epochs") || a.config.empty()) cfg.stage2_epochs = a.stage2_epochs;
  if (given("--clips-per-class") || a.config.empty()) cfg.clips_per_class = a.clips_per_class;
  if (given("--epochs") || a.config.empty()) cfg.train.epochs = a.epochs;
  if (given("--corpus-seed") || a.config.empty()) cfg.corpus_seed = a.corpus_seed;
  cfg.scratch_only = a.scratch_only;
  cfg.transfer_only = a.transfer_only;
  if (cfg.scratch_only && cfg.transfer_only) fail(ErrorKind::kConfig, "--scratch-only and --transfer-only exclude each other");
  if (cfg.seeds.empty() || cfg.pathways.empty()) fail(ErrorKind::kConfig, "need at least one seed and one pathway");
  cfg.train.validate();
  cfg.work_dir = a.out;
  make_dirs(a.out);
  const Json report = run_experiments(cfg, &std::cerr);
  write_text(fs::path(a.out) / "report.json", report.dump(1) + "\n");
  const std::string summary = experiment_summary(report);
  write_text(fs::path(a.out) / "report.txt", summary);
  std::cout << summary;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Speech emotion recognition toolkit: raw-audio and spectrogram transformers, transfer by head swap."};
  app.name("ser_forge");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  std::function<int()> action;

  SplitArgs split_args;
  auto* split_cmd = app.add_subcommand("split", "Assign train/val/test splits to a manifest");
  split_cmd->add_option("--manifest", split_args.manifest, "Input manifest CSV")->required()->check(CLI::ExistingFile);
  split_cmd->add_option("--out", split_args.out, "Output manifest CSV")->required();
  split_cmd->add_option("--labels", split_args.labels, "Label set: SHEMO6, SRC4 or a comma-separated list");
  split_cmd->add_option("--ratios", split_args.ratios, "train,val,test ratios");
  split_cmd->add_option("--seed", split_args.seed, "Permutation seed");
  split_cmd->add_flag("--stratified", split_args.stratified, "Split within each label");
  split_cmd->add_flag("--aliases", split_args.aliases, "Rewrite label aliases (joy -> happiness, ...)");
  split_cmd->callback([&] { action = [&] { return cmd_split(split_args); }; });

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic corpus (WAVs + manifest.csv)");
  synth_cmd->add_option("--out", synth_args.out, "Output directory")->required();
  synth_cmd->add_option("--seed", synth_args.seed, "Generator seed");
  synth_cmd->add_option("--spec", synth_args.spec, "Generator spec JSON")->check(CLI::ExistingFile);
  synth_cmd->add_option("--domain", synth_args.domain, "Recording domain preset: SRC or TGT (default TGT)");
  synth_cmd->add_option("--labels", synth_args.labels, "Label set (default SHEMO6)");
  auto* clips_opt = synth_cmd->add_option("--clips-per-class", synth_args.clips_per_class, "Clips per label");
  synth_cmd->callback([&] { action = [&] { return cmd_synth(synth_args, clips_opt); }; });

  FeaturizeArgs feat_args;
  auto* feat_cmd = app.add_subcommand("featurize", "Write one clip's model features to a SERF tensor file");
  feat_cmd->add_option("--wav", feat_args.wav, "Input WAV")->required()->check(CLI::ExistingFile);
  feat_cmd->add_option("--out", feat_args.out, "Output tensor file")->required();
  feat_cmd->add_option("--pathway", feat_args.pathway, "spectrogram (log-mel grid) or raw_audio (waveform)");
  feat_cmd->add_option("--config", feat_args.config, "JSON with spectrogram settings")->check(CLI::ExistingFile);
  feat_cmd->callback([&] { action = [&] { return cmd_featurize(feat_args); }; });

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train (or fine-tune with --init-from) a checkpoint");
  train_cmd->add_option("--config", train_args.config, "Run config JSON (flags override it)")->check(CLI::ExistingFile);
  train_cmd->add_option("--manifest", train_args.manifest, "Manifest CSV with train/val splits");
  train_cmd->add_option("--labels", train_args.labels, "Label set: SHEMO6, SRC4 or a comma-separated list");
  train_cmd->add_option("--pathway", train_args.pathway, "raw_audio or spectrogram");
  train_cmd->add_option("--init-from", train_args.init_from, "Checkpoint to fine-tune instead of random init");
  train_cmd->add_option("--out", train_args.out, "Output directory (checkpoint.serf, history.json)");
  train_cmd->add_option("--epochs", train_args.train.epochs, "Maximum epochs");
  train_cmd->add_option("--batch-size", train_args.train.batch_size, "Examples per step");
  train_cmd->add_option("--lr", train_args.train.learning_rate, "Adam learning rate");
  train_cmd->add_option("--weight-decay", train_args.train.weight_decay, "L2 weight decay");
  train_cmd->add_option("--seed", train_args.train.seed, "Seed for init, shuffling and dropout");
  train_cmd->add_option("--patience", train_args.train.early_stop_patience, "Early-stop patience in epochs (0 = off)");
  train_cmd->add_option("--dropout", train_args.dropout, "Residual dropout rate");
  train_cmd->add_flag("--class-weights", train_args.train.class_weights, "Inverse-frequency loss weights");
  train_cmd->add_flag("--aliases", train_args.aliases, "Rewrite label aliases (joy -> happiness, ...)");
  train_cmd->add_flag("--quiet", train_args.quiet, "No per-epoch progress");
  train_cmd->callback([&] { action = [&] { return cmd_train(train_args, *train_cmd); }; });

  SwapArgs swap_args;
  auto* swap_cmd = app.add_subcommand("swap-head", "Replace a checkpoint's classification head");
  swap_cmd->add_option("--in", swap_args.in, "Input checkpoint")->required()->check(CLI::ExistingFile);
  swap_cmd->add_option("--out", swap_args.out, "Output checkpoint")->required();
  swap_cmd->add_option("--labels", swap_args.labels, "New label set");
  swap_cmd->add_option("--seed", swap_args.seed, "Head initialization seed");
  swap_cmd->callback([&] { action = [&] { return cmd_swap_head(swap_args); }; });

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--manifest", eval_args.manifest, "Manifest CSV")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", eval_args.split, "train, val or test");
  eval_cmd->add_option("--out", eval_args.out, "Output directory (metrics.json, confusion.txt)");
  eval_cmd->add_flag("--aliases", eval_args.aliases, "Rewrite label aliases (joy -> happiness, ...)");
  eval_cmd->callback([&] { action = [&] { return cmd_eval(eval_args); }; });

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "Predict the emotion of one WAV");
  predict_cmd->add_option("--checkpoint", predict_args.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--wav", predict_args.wav, "Input WAV")->required()->check(CLI::ExistingFile);
  predict_cmd->callback([&] { action = [&] { return cmd_predict(predict_args); }; });

  ExperimentArgs exp_args;
  auto* exp_cmd = app.add_subcommand("run-experiment", "Run the scratch and transfer experiments");
  exp_cmd->add_option("--config", exp_args.config, "Experiment config JSON (flags override it)")->check(CLI::ExistingFile);
  exp_cmd->add_option("--out", exp_args.out, "Work/output directory");
  exp_cmd->add_option("--seeds", exp_args.seeds, "Comma-separated seeds");
  exp_cmd->add_option("--pathways", exp_args.pathways, "Comma-separated pathways");
  exp_cmd->add_option("--epochs", exp_args.epochs, "Maximum epochs for scratch runs and source training");
  exp_cmd->add_option("--stage2-epochs", exp_args.stage2_epochs, "Matched epoch budget for the target stage");
  exp_cmd->add_option("--clips-per-class", exp_args.clips_per_class, "Target corpus clips per label");
  exp_cmd->add_option("--corpus-seed", exp_args.corpus_seed, "Synthetic corpus seed");
  exp_cmd->add_flag("--scratch-only", exp_args.scratch_only, "Only the training-from-scratch experiment");
  exp_cmd->add_flag("--transfer-only", exp_args.transfer_only, "Only the transfer experiment");
  exp_cmd->callback([&] { action = [&] { return cmd_run_experiment(exp_args, *exp_cmd); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }
  try {
    return action();
  } catch (const Error& e) {
    std::cerr << "ser_forge: " << error_kind_name(e.kind()) << ": " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::bad_alloc&) {
    std::cerr << "ser_forge: out of memory\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "ser_forge: " << e.what() << "\n";
    return kExitUsage;
  }
}
