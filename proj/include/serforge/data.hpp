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

// Dataset manifests, the seeded 80/10/10 split, corpus statistics, and a
// synthetic emotional-audio generator.
//
// Manifest CSV (UTF-8, header row required):
//
//   utterance_id,audio_path,label,speaker_id,gender,split
//
// utterance_id, audio_path and label are required; the other columns may be
// absent or empty. Relative audio paths resolve against the manifest's own
// directory.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "serforge/audio_io.hpp"
#include "serforge/error.hpp"
#include "serforge/labels.hpp"
#include "serforge/runtime.hpp"

namespace serforge {

enum class Gender { kFemale, kMale, kUnknown };
enum class Split { kTrain, kVal, kTest, kUnassigned };

inline std::string_view gender_name(Gender g) {
  switch (g) {
    case Gender::kFemale: return "F";
    case Gender::kMale: return "M";
    default: return "unknown";
  }
}

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    default: return "unassigned";
  }
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  if (s == "unassigned" || s.empty()) return Split::kUnassigned;
  return std::nullopt;
}

struct ManifestRecord {
  std::string utterance_id;
  std::string audio_path;
  std::string label;
  std::string speaker_id;
  Gender gender = Gender::kUnknown;
  Split split = Split::kUnassigned;

  bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  LabelSet labels;
  std::string base_dir;  // relative audio paths resolve against this

  std::size_t size() const { return records.size(); }

  std::vector<const ManifestRecord*> in_split(Split s) const {
    std::vector<const ManifestRecord*> out;
    for (const auto& r : records) {
      if (r.split == s) out.push_back(&r);
    }
    return out;
  }

  std::string resolve(const ManifestRecord& r) const {
    std::filesystem::path p(r.audio_path);
    if (p.is_absolute() || base_dir.empty()) return p.string();
    return (std::filesystem::path(base_dir) / p).string();
  }
};

namespace csv_detail {

// Splits one CSV line; supports double-quoted fields with "" escapes.
inline std::vector<std::string> split_line(const std::string& line, std::size_t row) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) fail(ErrorKind::kParse, "row " + std::to_string(row) + ": unterminated quote");
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace csv_detail

// Parses manifest text. Labels must be canonical members of `labels` unless
// an alias map is given, in which case aliases are rewritten first. Row
// numbers in errors count the header as row 1.
inline DatasetManifest parse_manifest(const std::string& text, const LabelSet& labels,
                                      const LabelAliases* aliases = nullptr) {
  DatasetManifest m;
  m.labels = labels;
  std::istringstream in(text);
  std::string line;
  std::size_t row = 0;
  std::map<std::string, std::size_t> col;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (row == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    if (row == 1) {
      auto names = csv_detail::split_line(line, row);
      for (std::size_t i = 0; i < names.size(); ++i) col[names[i]] = i;
      for (const char* req : {"utterance_id", "audio_path", "label"}) {
        if (!col.count(req)) fail(ErrorKind::kParse, std::string("manifest header lacks column '") + req + "'");
      }
      continue;
    }
    if (line.empty()) continue;
    auto f = csv_detail::split_line(line, row);
    auto get = [&](const char* name) -> std::string {
      auto it = col.find(name);
      if (it == col.end()) return {};
      if (it->second >= f.size()) {
        fail(ErrorKind::kParse, "row " + std::to_string(row) + ": missing field '" + name + "'");
      }
      return f[it->second];
    };
    ManifestRecord r;
    r.utterance_id = get("utterance_id");
    r.audio_path = get("audio_path");
    r.label = get("label");
    r.speaker_id = get("speaker_id");
    if (r.utterance_id.empty()) fail(ErrorKind::kParse, "row " + std::to_string(row) + ": empty utterance_id");
    if (aliases) {
      auto it = aliases->find(r.label);
      if (it != aliases->end()) r.label = it->second;
    }
    if (!labels.find(r.label)) {
      fail(ErrorKind::kLabel, "row " + std::to_string(row) + ": label '" + r.label + "' is not in {" +
                                  labels.joined() + "}");
    }
    const std::string g = get("gender");
    if (g == "F" || g == "f") {
      r.gender = Gender::kFemale;
    } else if (g == "M" || g == "m") {
      r.gender = Gender::kMale;
    } else if (g.empty() || g == "unknown") {
      r.gender = Gender::kUnknown;
    } else {
      fail(ErrorKind::kParse, "row " + std::to_string(row) + ": gender '" + g + "' is not F, M or unknown");
    }
    auto s = parse_split(get("split"));
    if (!s) fail(ErrorKind::kParse, "row " + std::to_string(row) + ": unknown split '" + get("split") + "'");
    r.split = *s;
    if (!ids.insert(r.utterance_id).second) {
      fail(ErrorKind::kDuplicateId, "row " + std::to_string(row) + ": duplicate utterance_id '" + r.utterance_id + "'");
    }
    m.records.push_back(std::move(r));
  }
  if (row == 0) fail(ErrorKind::kParse, "manifest is empty (no header row)");
  return m;
}

inline DatasetManifest load_manifest(const std::string& path, const LabelSet& labels,
                                     const LabelAliases* aliases = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open manifest " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  auto m = parse_manifest(ss.str(), labels, aliases);
  m.base_dir = std::filesystem::path(path).parent_path().string();
  return m;
}

inline std::string format_manifest(const DatasetManifest& m) {
  std::string out = "utterance_id,audio_path,label,speaker_id,gender,split\n";
  for (const auto& r : m.records) {
    out += csv_detail::quote(r.utterance_id) + "," + csv_detail::quote(r.audio_path) + "," +
           csv_detail::quote(r.label) + "," + csv_detail::quote(r.speaker_id) + "," +
           std::string(gender_name(r.gender)) + "," + std::string(split_name(r.split)) + "\n";
  }
  return out;
}

// Relative audio paths are rewritten so they still resolve from the
// directory the manifest is written to.
inline void save_manifest(const DatasetManifest& m, const std::string& path) {
  namespace fs = std::filesystem;
  const fs::path dest = fs::absolute(fs::path(path).parent_path());
  DatasetManifest out = m;
  if (!m.base_dir.empty() && fs::absolute(m.base_dir).lexically_normal() != dest.lexically_normal()) {
    for (auto& r : out.records) {
      if (fs::path(r.audio_path).is_absolute()) continue;
      const fs::path target = fs::absolute(m.resolve(r)).lexically_normal();
      const fs::path rel = target.lexically_relative(dest.lexically_normal());
      r.audio_path = rel.empty() ? target.string() : rel.string();
    }
  }
  const std::string text = format_manifest(out);
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct SplitCounts {
  std::size_t train = 0, val = 0, test = 0;
  bool operator==(const SplitCounts&) const = default;
};

// n_train = floor(r_train n), n_val = floor(r_val n), n_test = the rest.
inline SplitCounts split_counts(std::size_t n, const SplitRatios& r = {}) {
  // The epsilon keeps e.g. 0.7 * 10 from flooring to 6.
  auto fl = [](double x) { return static_cast<std::size_t>(std::floor(x + 1e-9)); };
  SplitCounts c;
  c.train = fl(r.train * static_cast<double>(n));
  c.val = fl(r.val * static_cast<double>(n));
  c.test = n - c.train - c.val;
  return c;
}

inline SplitCounts count_splits(const DatasetManifest& m) {
  SplitCounts c;
  for (const auto& r : m.records) {
    if (r.split == Split::kTrain) ++c.train;
    if (r.split == Split::kVal) ++c.val;
    if (r.split == Split::kTest) ++c.test;
  }
  return c;
}

// Seeded uniform permutation; the first n_train permuted records go to
// train, the next n_val to val, the rest to test. Record order is kept, only
// the split column changes. With `stratified`, the same rule is applied
// within each label.
inline DatasetManifest split(DatasetManifest m, const SplitRatios& ratios, std::uint64_t seed,
                             bool stratified = false) {
  if (!(ratios.train > 0 && ratios.val > 0 && ratios.test > 0) ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    fail(ErrorKind::kConfig, "split ratios must be positive and sum to 1");
  }
  const std::size_t n = m.records.size();
  if (n < 3) fail(ErrorKind::kTooFew, "need at least 3 records to split, have " + std::to_string(n));
  std::mt19937_64 rng(seed);
  auto assign = [&](std::vector<std::size_t> idx) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto c = split_counts(idx.size(), ratios);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      m.records[idx[i]].split = i < c.train ? Split::kTrain : i < c.train + c.val ? Split::kVal : Split::kTest;
    }
  };
  if (!stratified) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    assign(std::move(idx));
  } else {
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < n; ++i) groups[m.records[i].label].push_back(i);
    for (auto& [label, idx] : groups) assign(std::move(idx));
  }
  return m;
}

struct DurationStats {
  double min = 0.0, max = 0.0, mean = 0.0, stddev = 0.0;
};

struct DatasetStats {
  std::vector<std::pair<std::string, std::size_t>> label_counts;  // label-set order
  std::optional<DurationStats> durations;
  std::map<std::string, std::size_t> speakers_per_gender;  // distinct speaker ids
  std::size_t total = 0;
};

// Exact per-label counts, population duration statistics when durations
// are given (one per record), and distinct speakers per gender.
inline DatasetStats class_stats(const DatasetManifest& m, const std::vector<double>* durations = nullptr) {
  DatasetStats st;
  st.total = m.records.size();
  std::map<std::string, std::size_t> counts;
  for (const auto& r : m.records) ++counts[r.label];
  for (const auto& name : m.labels.names()) st.label_counts.emplace_back(name, counts[name]);
  for (const auto& [name, c] : counts) {
    if (!m.labels.find(name)) st.label_counts.emplace_back(name, c);
  }
  std::map<std::string, std::set<std::string>> speakers;
  for (const auto& r : m.records) {
    if (!r.speaker_id.empty()) speakers[std::string(gender_name(r.gender))].insert(r.speaker_id);
  }
  for (const auto& [g, s] : speakers) st.speakers_per_gender[g] = s.size();
  if (durations) {
    if (durations->size() != m.records.size()) fail(ErrorKind::kShape, "need one duration per record");
    if (!durations->empty()) {
      DurationStats d;
      d.min = *std::min_element(durations->begin(), durations->end());
      d.max = *std::max_element(durations->begin(), durations->end());
      double sum = 0.0;
      for (double v : *durations) sum += v;
      d.mean = sum / static_cast<double>(durations->size());
      double var = 0.0;
      for (double v : *durations) var += (v - d.mean) * (v - d.mean);
      d.stddev = std::sqrt(var / static_cast<double>(durations->size()));
      st.durations = d;
    }
  }
  return st;
}

// ---- synthetic corpus ----

enum class NoiseColor { kWhite, kBrown };

// Recording conditions shared by every clip of a corpus. Domain shift
// between two corpora is a different base pitch and noise.
struct SynthDomain {
  std::string name = "TGT";
  double base_hz = 160.0;
  double snr_db = 6.0;
  NoiseColor noise = NoiseColor::kBrown;

  static SynthDomain src() { return {"SRC", 110.0, 10.0, NoiseColor::kWhite}; }
  static SynthDomain tgt() { return {"TGT", 160.0, 6.0, NoiseColor::kBrown}; }
};

struct SynthSpec {
  LabelSet labels = LabelSet::shemo6();
  std::size_t clips_per_class = 40;
  SynthDomain domain = SynthDomain::tgt();
  double class_ratio = 1.15;
  std::vector<double> am_rates{2.0, 3.5, 5.0, 6.5, 8.0, 9.5};
  double min_seconds = 1.0;
  double max_seconds = 6.0;
  int sample_rate = kModelSampleRate;
  std::size_t harmonics = 6;
  std::size_t speakers = 8;

  void validate() const {
    auto bad = [](const std::string& msg) { fail(ErrorKind::kConfig, "synth: " + msg); };
    if (labels.empty()) bad("label set is empty");
    if (clips_per_class == 0) bad("clips_per_class must be positive");
    if (!(domain.base_hz > 0)) bad("base_hz must be positive");
    if (!(class_ratio > 1.0)) bad("class_ratio must exceed 1");
    if (!(min_seconds > 0 && max_seconds >= min_seconds)) bad("need 0 < min_seconds <= max_seconds");
    if (sample_rate <= 0) bad("sample_rate must be positive");
    if (harmonics == 0) bad("harmonics must be positive");
    if (speakers == 0) bad("speakers must be positive");
    for (std::size_t c = 0; c < labels.size(); ++c) {
      if (profile_index(c) >= am_rates.size()) bad("not enough am_rates for the label set");
    }
    const double top = domain.base_hz * std::pow(class_ratio, static_cast<double>(max_profile())) * harmonics;
    if (top >= sample_rate / 2.0) bad("highest harmonic exceeds the Nyquist frequency");
  }

  // A label's acoustic profile follows its position in the six-class
  // taxonomy, so a label keeps its profile across corpora that use
  // different label sets. Labels outside that taxonomy use their own index.
  std::size_t profile_index(std::size_t class_index) const {
    const auto& name = labels.name(class_index);
    if (auto i = LabelSet::shemo6().find(name)) return *i;
    return class_index;
  }

  std::size_t max_profile() const {
    std::size_t mx = 0;
    for (std::size_t c = 0; c < labels.size(); ++c) mx = std::max(mx, profile_index(c));
    return mx;
  }
};

namespace synth_detail {

inline std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace synth_detail

// One clip: a harmonic tone at f0 = base * ratio^profile (with +-3% jitter),
// amplitude-modulated at the profile's AM rate, plus noise at the domain
// SNR. Depends only on (spec, seed, class, index).
inline AudioClip synth_clip(const SynthSpec& spec, std::uint64_t seed, std::size_t class_index, std::size_t index) {
  using synth_detail::mix;
  std::mt19937_64 rng(mix(mix(mix(seed) ^ (class_index + 1)) ^ (index + 1)));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  constexpr double kTwoPi = 6.283185307179586;

  const std::size_t profile = spec.profile_index(class_index);
  const double seconds = spec.min_seconds + (spec.max_seconds - spec.min_seconds) * uni(rng);
  const auto n = static_cast<std::size_t>(std::llround(seconds * spec.sample_rate));
  const double f0 = spec.domain.base_hz * std::pow(spec.class_ratio, static_cast<double>(profile)) *
                    (1.0 + 0.06 * (uni(rng) - 0.5));
  const double am = spec.am_rates[profile] * (1.0 + 0.1 * (uni(rng) - 0.5));
  const double am_phase = kTwoPi * uni(rng);
  std::vector<double> phases(spec.harmonics);
  for (auto& p : phases) p = kTwoPi * uni(rng);

  std::vector<double> tone(n);
  double power = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / spec.sample_rate;
    double v = 0.0;
    for (std::size_t h = 0; h < spec.harmonics; ++h) {
      v += std::sin(kTwoPi * f0 * static_cast<double>(h + 1) * t + phases[h]) / static_cast<double>(h + 1);
    }
    v *= 0.6 + 0.4 * std::sin(kTwoPi * am * t + am_phase);
    tone[i] = v;
    power += v * v;
  }
  power /= static_cast<double>(n);

  std::vector<double> noise(n);
  double state = 0.0, noise_power = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double w = normal(rng);
    // Leaky integration tilts the spectrum toward low frequencies.
    state = spec.domain.noise == NoiseColor::kBrown ? 0.98 * state + w : w;
    noise[i] = state;
    noise_power += state * state;
  }
  noise_power /= static_cast<double>(n);
  const double noise_gain = std::sqrt(power / (noise_power * std::pow(10.0, spec.domain.snr_db / 10.0)));

  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    tone[i] += noise_gain * noise[i];
    peak = std::max(peak, std::abs(tone[i]));
  }
  AudioClip clip;
  clip.sample_rate = spec.sample_rate;
  clip.samples.resize(n);
  const double gain = peak > 0 ? 0.8 / peak : 0.0;
  for (std::size_t i = 0; i < n; ++i) clip.samples[i] = static_cast<float>(tone[i] * gain);
  return clip;
}

// Writes clips_per_class WAVs per label into out_dir, plus manifest.csv.
// File names carry the domain and seed, so corpora generated with different
// seeds never collide. Rows are ordered by class, then index.
inline DatasetManifest synth_corpus(const SynthSpec& spec, std::uint64_t seed, const std::string& out_dir) {
  spec.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create " + out_dir + ": " + ec.message());
  DatasetManifest m;
  m.labels = spec.labels;
  m.base_dir = out_dir;
  const std::size_t per = spec.clips_per_class;
  for (std::size_t c = 0; c < spec.labels.size(); ++c) {
    for (std::size_t i = 0; i < per; ++i) {
      ManifestRecord r;
      char idx[16];
      std::snprintf(idx, sizeof idx, "%04zu", i);
      r.utterance_id = spec.domain.name + "_s" + std::to_string(seed) + "_" + spec.labels.name(c) + "_" + idx;
      r.audio_path = r.utterance_id + ".wav";
      r.label = spec.labels.name(c);
      const std::size_t spk = (c * per + i) % spec.speakers;
      r.speaker_id = spec.domain.name + "_spk" + std::to_string(spk);
      r.gender = spk % 2 == 0 ? Gender::kFemale : Gender::kMale;
      m.records.push_back(std::move(r));
    }
  }
  parallel_for(m.records.size(), [&](std::size_t k) {
    auto clip = synth_clip(spec, seed, k / per, k % per);
    write_wav_file(m.resolve(m.records[k]), clip);
  });
  save_manifest(m, (std::filesystem::path(out_dir) / "manifest.csv").string());
  return m;
}

}  // namespace serforge
