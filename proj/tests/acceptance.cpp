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

// Acceptance run: prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. The two training experiments dominate the
// runtime (about an hour on one core).

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "op_checks.hpp"
#include "serforge/checkpoint.hpp"
#include "serforge/data.hpp"
#include "serforge/dsp_frontend.hpp"
#include "serforge/evaluation.hpp"
#include "serforge/experiment.hpp"
#include "serforge/grad_check.hpp"
#include "serforge/model.hpp"
#include "serforge/pipeline.hpp"
#include "serforge/runtime.hpp"
#include "serforge/training.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace serforge;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  // Records a failed check; the first few messages end up in the report line.
  void expect(bool ok, const std::string& what) {
    if (ok) return;
    if (pass) detail << "failed: ";
    else detail << "; ";
    detail << what;
    pass = false;
  }
};

using Criterion = std::function<void(Outcome&)>;

std::string fmt(double v, int digits = 4) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(digits);
  o << v;
  return o.str();
}

// ---- 1: gradients ----

void gradients(Outcome& out) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_prim = 0.0;
  std::size_t n_ops = 0;
  for (auto& c : testing::op_checks()) {
    const auto r = grad_check_report(c.f, c.inputs, 1e-3);
    out.expect(r.fraction_within(c.threshold) >= c.required_within,
               c.name + " max rel " + fmt(r.max_rel_error, 6));
    if (c.required_within == 1.0) worst_prim = std::max(worst_prim, r.max_rel_error);
    ++n_ops;
  }
  {
    auto m = init_model<double>(testing::tiny_raw_config(), testing::labels_of(3));
    const auto r = model_grad_check<double>(m, ModelInput{testing::random_wave(400, 15)}, 1, 1e-3);
    out.expect(r.fraction_within(1e-2) >= 0.99, "raw model " + fmt(r.fraction_within(1e-2)) + " within 1e-2");
  }
  {
    auto m = init_model<double>(testing::tiny_spec_config(), testing::labels_of(3));
    const auto r = model_grad_check<double>(m, ModelInput{testing::random_patches(4, 2, 3, 16)}, 2, 1e-3);
    out.expect(r.fraction_within(1e-2) >= 0.99, "spectrogram model " + fmt(r.fraction_within(1e-2)) + " within 1e-2");
  }
  const double secs = experiment_detail::seconds_since(t0);
  out.expect(secs < 60.0, "took " + fmt(secs, 1) + " s");
  out.detail << (out.pass ? "" : "; ") << n_ops << " ops + 2 models, worst primitive rel error "
             << fmt(worst_prim, 8) << ", " << fmt(secs, 1) << " s";
}

// ---- 2: shapes ----

void shapes(Outcome& out) {
  const std::vector<float> wave = testing::random_wave(5 * kModelSampleRate, 3);
  const auto raw = init_model(ModelConfig::defaults(Pathway::kRawAudio, 6), LabelSet::shemo6());
  {
    Graph<float> g;
    ForwardContext<float> ctx(g, raw);
    const auto frames = conv_encode(ctx, wave);
    out.expect(frames.shape() == Shape{249, 64}, "raw frames " + shape_string(frames.shape()));
  }
  out.expect(conv_output_frames(raw.config, wave.size()) == 249, "closed-form raw frames");

  const SpectrogramConfig sc;
  const auto power = stft_power(wave, sc);
  out.expect(power.frames == 498, "stft frames " + std::to_string(power.frames));
  const auto mel = log_mel_spectrogram(wave, sc, mel_filterbank(sc));
  out.expect(mel.frames == 512 && mel.mel_bins == 128, "log-mel frames " + std::to_string(mel.frames));
  const auto patches = patchify(mel);
  out.expect(patches.size() == 600, "patches " + std::to_string(patches.size()));
  const auto spec = init_model(ModelConfig::defaults(Pathway::kSpectrogram, 6), LabelSet::shemo6());
  Graph<float> g;
  ForwardContext<float> ctx(g, spec);
  const auto tokens = patch_embed(ctx, patches);
  out.expect(tokens.shape() == Shape{601, 64}, "tokens " + shape_string(tokens.shape()));
  for (const auto& m : {&raw, &spec}) {
    const auto logits = predict_logits(*m, m == &raw ? ModelInput{wave} : ModelInput{patches});
    out.expect(logits.size() == 6, "logit count");
  }
  out.detail << "249 raw frames; 498 -> 512 frames, 600 patches, 601 tokens";
}

// ---- 3: DSP oracles ----

void dsp_oracles(Outcome& out) {
  const SpectrogramConfig cfg;
  const auto x = testing::random_wave(4000, 11);
  const auto p = stft_power(x, cfg);
  const auto w = hann_window(cfg.window_length);
  const std::size_t half = cfg.fft_size / 2;
  double spectral = 0, temporal = 0;
  for (std::size_t t = 0; t < p.frames; ++t) {
    for (std::size_t k = 0; k <= half; ++k) spectral += (k == 0 || k == half ? 1.0 : 2.0) * p.at(k, t);
    for (std::size_t i = 0; i < cfg.window_length; ++i) {
      const double s = w[i] * x[t * cfg.hop + i];
      temporal += s * s;
    }
  }
  spectral /= static_cast<double>(cfg.fft_size);
  const double parseval = std::abs(spectral - temporal) / temporal;
  out.expect(parseval <= 1e-6, "Parseval rel error " + std::to_string(parseval));

  const double mel700 = hz_to_mel(700.0);
  out.expect(std::abs(mel700 - 781.17) < 0.005, "mel(700) = " + fmt(mel700, 4));

  const auto fb = mel_filterbank(cfg);
  const std::vector<float> silence(5 * kModelSampleRate, 0.0f);
  const auto zero = log_mel_spectrogram(silence, cfg, fb);
  const float floor_value = static_cast<float>(std::log(1e-10));
  bool all_floor = !zero.values.empty();
  for (float v : zero.values) all_floor = all_floor && v == floor_value;
  out.expect(all_floor, "zero signal log-mel is not ln(1e-10) everywhere");

  // Coverage: every FFT bin strictly between the first and last filter
  // centers has positive, bounded total weight; every filter is nonzero and
  // unimodal.
  const double df = static_cast<double>(kModelSampleRate) / static_cast<double>(cfg.fft_size);
  bool covered = true, unimodal = true;
  for (std::size_t k = 0; k < fb.cols(); ++k) {
    const double fk = static_cast<double>(k) * df;
    if (!(fk > fb.edges_hz()[1] && fk < fb.edges_hz()[fb.rows()])) continue;
    double col = 0;
    for (std::size_t m = 0; m < fb.rows(); ++m) col += fb.weight(m, k);
    covered = covered && col > 0.0 && col <= 2.0;
  }
  for (std::size_t m = 0; m < fb.rows(); ++m) {
    std::size_t peak = 0;
    for (std::size_t k = 0; k < fb.cols(); ++k) {
      if (fb.weight(m, k) > fb.weight(m, peak)) peak = k;
    }
    unimodal = unimodal && fb.weight(m, peak) > 0.0f;
    for (std::size_t k = 1; k <= peak; ++k) unimodal = unimodal && fb.weight(m, k) >= fb.weight(m, k - 1);
    for (std::size_t k = peak + 1; k < fb.cols(); ++k) unimodal = unimodal && fb.weight(m, k) <= fb.weight(m, k - 1);
  }
  out.expect(covered, "filterbank leaves a bin uncovered");
  out.expect(unimodal, "filterbank row not unimodal");
  out.detail << "Parseval " << parseval << ", mel(700) " << fmt(mel700, 4) << ", silence = ln(1e-10), coverage ok";
}

// ---- 4: splits ----

void split_fidelity(Outcome& out) {
  DatasetManifest m;
  m.labels = LabelSet::shemo6();
  for (std::size_t i = 0; i < 3000; ++i) {
    m.records.push_back({"u" + std::to_string(i), "u" + std::to_string(i) + ".wav", m.labels.name(i % 6),
                         "s" + std::to_string(i % 87), Gender::kUnknown, Split::kUnassigned});
  }
  const auto a = split(m, {}, 17), b = split(m, {}, 17);
  const auto c = count_splits(a);
  out.expect(c == SplitCounts{2400, 300, 300},
             "counts " + std::to_string(c.train) + "/" + std::to_string(c.val) + "/" + std::to_string(c.test));
  out.expect(format_manifest(a) == format_manifest(b), "not deterministic");
  bool same = a.size() == m.size();
  for (std::size_t i = 0; same && i < m.size(); ++i) {
    auto r = a.records[i];
    r.split = Split::kUnassigned;
    same = r == m.records[i];
  }
  out.expect(same, "records changed");
  out.detail << "2400/300/300, deterministic, multiset preserved";
}

// ---- 5 and 6: experiments ----

void experiment1(const Json& report, Outcome& out) {
  for (const auto& [name, block] : report.at("experiment1").items()) {
    std::size_t passing = 0;
    std::string accs;
    for (const auto& run : block.at("runs")) {
      const double acc = run.at("test").at("accuracy").get<double>();
      const double secs = run.at("elapsed_seconds").get<double>();
      passing += acc >= 0.90;
      accs += (accs.empty() ? "" : ",") + fmt(acc, 3);
      out.expect(run.at("epochs_run").get<std::size_t>() <= 30, name + " ran more than 30 epochs");
      out.expect(secs <= 600.0, name + " run took " + fmt(secs, 0) + " s");
    }
    out.expect(passing >= 4, name + " only " + std::to_string(passing) + "/5 seeds >= 0.90");
    out.detail << (out.pass ? "" : "; ") << name << " test acc [" << accs << "] ";
  }
}

void experiment2(const Json& report, Outcome& out) {
  for (const auto& [name, block] : report.at("experiment2").items()) {
    const double zero_shot = block.at("max_zero_shot_test_accuracy").get<double>();
    const auto wins = block.at("seeds_transfer_val_at_least_scratch").get<std::size_t>();
    const double tr = block.at("mean_transfer_test_accuracy").get<double>();
    const double sc = block.at("mean_scratch_test_accuracy").get<double>();
    out.expect(zero_shot <= 0.45, name + " zero-shot " + fmt(zero_shot, 3));
    out.expect(wins >= 4, name + " transfer val >= scratch in only " + std::to_string(wins) + "/5 seeds");
    out.expect(tr >= sc, name + " mean transfer test " + fmt(tr, 3) + " < scratch " + fmt(sc, 3));
    out.detail << (out.pass ? "" : "; ") << name << " zero-shot max " << fmt(zero_shot, 3) << ", val wins " << wins
               << "/5, test transfer " << fmt(tr, 3) << " vs scratch " << fmt(sc, 3) << " ";
  }
}

// ---- 7: head swap and checkpoint round trip ----

void head_swap_invariant(Outcome& out, const fs::path& work) {
  for (Pathway pw : {Pathway::kRawAudio, Pathway::kSpectrogram}) {
    auto src = initial_checkpoint(ModelConfig::defaults(pw, 4), LabelSet::src4());
    if (pw == Pathway::kSpectrogram) src.frontend_stats = SpectrogramStats{-7.25, 3.5};
    src.provenance.push_back({"train", "src", 12, Json::object()});
    const auto swapped = head_swap(src, LabelSet::shemo6(), 3);
    const std::string name(pathway_name(pw));
    bool backbone = true;
    for (const auto& [pname, t] : src.model.params) {
      if (!is_head_parameter(pname)) backbone = backbone && t.bit_equal(swapped.model.param(pname));
    }
    out.expect(backbone, name + " backbone changed");
    out.expect(swapped.config().n_classes == 6 && swapped.model.param("head.weight").shape() == Shape{6, 64},
               name + " head shape");
    out.expect(swapped.provenance.size() == 2, name + " provenance");
    const auto path = (work / ("roundtrip_" + name + ".serf")).string();
    save_checkpoint(swapped, path);
    const auto loaded = load_checkpoint(path);
    out.expect(bit_equal(loaded, swapped), name + " load(save(x)) != x");
    out.expect(serialize_checkpoint(loaded) == read_file_bytes(path), name + " re-serialization differs");
  }
  out.detail << "backbone bit-identical, save/load bit-exact (both pathways)";
}

// ---- 8: metrics ----

void metrics_identities(Outcome& out) {
  ConfusionMatrix cm(2);
  cm.at(0, 0) = 2;
  cm.at(1, 0) = 1;
  cm.at(1, 1) = 1;
  const auto m = compute_metrics(cm);
  out.expect(std::abs(m.accuracy - 0.75) <= 1e-4, "accuracy " + fmt(m.accuracy));
  out.expect(std::abs(m.balanced_accuracy - 0.75) <= 1e-4, "balanced accuracy " + fmt(m.balanced_accuracy));
  out.expect(std::abs(m.macro_f1 - 0.7333) <= 1e-4, "macro F1 " + fmt(m.macro_f1));
  std::mt19937_64 rng(2);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    ConfusionMatrix r(6);
    for (auto& c : r.counts) c = rng() % 50;
    const auto rm = compute_metrics(r);
    double weighted = 0.0;
    for (const auto& pc : rm.per_class) weighted += pc.recall * static_cast<double>(pc.support);
    worst = std::max(worst, std::abs(rm.accuracy - weighted / static_cast<double>(rm.n_examples)));
  }
  out.expect(worst <= 1e-12, "support-weighted recall differs by " + std::to_string(worst));
  out.detail << "[[2,0],[1,1]] -> " << fmt(m.accuracy) << " / " << fmt(m.balanced_accuracy) << " / "
             << fmt(m.macro_f1) << ", recall identity max diff " << worst;
}

// ---- 9: determinism ----

void determinism(Outcome& out, const fs::path& work) {
  SynthSpec spec;
  spec.clips_per_class = 10;
  const Corpus base = Corpus::load(synth_corpus(spec, 11, (work / "det_corpus").string()));
  const Corpus corpus{split(base.manifest, {}, 4), base.clips};
  auto files = [](const fs::path& dir) {
    return std::vector<std::string>{(dir / "checkpoint.serf").string(), (dir / "history.json").string(),
                                    (dir / "metrics.json").string()};
  };
  for (Pathway pw : {Pathway::kRawAudio, Pathway::kSpectrogram}) {
    const std::string name(pathway_name(pw));
    const FeatureCache cache(corpus, pw);
    for (const char* tag : {"a", "b"}) {
      auto mc = ModelConfig::defaults(pw, 6);
      mc.seed = 21;
      mc.dropout = 0.0;
      TrainConfig tc;
      tc.epochs = 3;
      tc.seed = 21;
      const auto run = train_run(initial_checkpoint(mc, spec.labels), corpus, cache, tc, "det");
      const auto ev = evaluate_run(run.checkpoint, corpus, cache, Split::kTest);
      const fs::path dir = work / ("det_" + name + "_" + tag);
      fs::create_directories(dir);
      const auto f = files(dir);
      save_checkpoint(run.checkpoint, f[0]);
      const std::string hist = history_json(run.history).dump(1) + "\n";
      const std::string metrics = metrics_json(ev.metrics, spec.labels).dump(1) + "\n";
      std::ofstream(f[1], std::ios::binary) << hist;
      std::ofstream(f[2], std::ios::binary) << metrics;
    }
    const auto a = files(work / ("det_" + name + "_a")), b = files(work / ("det_" + name + "_b"));
    for (std::size_t i = 0; i < a.size(); ++i) {
      out.expect(read_file_bytes(a[i]) == read_file_bytes(b[i]), name + " " + fs::path(a[i]).filename().string());
    }
  }
  out.detail << "checkpoint, history and metrics byte-identical across two runs (both pathways)";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work = "acceptance_work";
  std::string report_path;
  app.add_option("--work", work, "Scratch directory");
  app.add_option("--report", report_path, "Where to write the experiment report JSON");
  CLI11_PARSE(app, argc, argv);
  tune_allocator();
  fs::create_directories(work);
  if (report_path.empty()) report_path = (fs::path(work) / "experiments.json").string();

  int failures = 0;
  auto report_line = [&](int id, const std::string& title, const Criterion& body) {
    Outcome out;
    try {
      body(out);
    } catch (const std::exception& e) {
      out.expect(false, std::string("exception: ") + e.what());
    }
    failures += !out.pass;
    std::cout << (out.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << title << "): " << out.detail.str()
              << std::endl;
  };

  report_line(1, "gradient correctness", gradients);
  report_line(2, "shape algebra", shapes);
  report_line(3, "DSP oracles", dsp_oracles);
  report_line(4, "split fidelity", split_fidelity);

  Json report;
  std::string experiment_error;
  try {
    ExperimentConfig cfg;
    cfg.work_dir = (fs::path(work) / "experiments").string();
    report = run_experiments(cfg, &std::cerr);
    std::ofstream(report_path) << report.dump(1) << "\n";
  } catch (const std::exception& e) {
    experiment_error = e.what();
  }
  auto from_report = [&](void (*check)(const Json&, Outcome&)) {
    return [&, check](Outcome& out) {
      if (!experiment_error.empty()) {
        out.expect(false, "experiment run failed: " + experiment_error);
        return;
      }
      check(report, out);
    };
  };
  report_line(5, "scratch training on the synthetic corpus", from_report(experiment1));
  report_line(6, "source-to-target transfer", from_report(experiment2));

  report_line(7, "head swap and checkpoint round trip", [&](Outcome& o) { head_swap_invariant(o, work); });
  report_line(8, "metric identities", metrics_identities);
  report_line(9, "determinism", [&](Outcome& o) { determinism(o, work); });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
