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

// Checkpoint container:
//
//   "SERF" | u32 format_version | u64 header_bytes | header | payload
//
// All integers little-endian. The header is UTF-8 JSON holding the model
// config, label set, frontend statistics, provenance and a tensor directory
// of {name, shape, offset}; offsets are byte offsets into the payload, which
// stores every tensor as raw little-endian float32.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "serforge/audio_io.hpp"
#include "serforge/dsp_frontend.hpp"
#include "serforge/error.hpp"
#include "serforge/labels.hpp"
#include "serforge/model.hpp"

namespace serforge {

using Json = nlohmann::json;

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'S', 'E', 'R', 'F'};

// ---- config <-> JSON ----

inline Json to_json(const ModelConfig& c) {
  return Json{{"pathway", std::string(pathway_name(c.pathway))},
              {"d_model", c.d_model},
              {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},
              {"ff_dim", c.ff_dim},
              {"n_classes", c.n_classes},
              {"conv_channels", c.conv_channels},
              {"conv_strides", c.conv_strides},
              {"conv_kernels", c.conv_kernels},
              {"patch_size", c.patch_size},
              {"max_tokens", c.max_tokens},
              {"dropout", c.dropout},
              {"seed", c.seed}};
}

inline Json to_json(const SpectrogramConfig& c) {
  return Json{{"window_length", c.window_length}, {"hop", c.hop},
              {"fft_size", c.fft_size},           {"mel_bins", c.mel_bins},
              {"f_min", c.f_min},                 {"f_max", c.f_max},
              {"log_floor", c.log_floor},         {"target_frames", c.target_frames},
              {"patch_size", c.patch_size},       {"patch_stride", c.patch_stride}};
}

namespace json_detail {

// Reads j[key] into out when present; a value of the wrong type is a
// ConfigError naming the field.
template <typename V>
void read_field(const Json& j, const char* key, V& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<V>();
  } catch (const nlohmann::json::exception&) {
    fail(ErrorKind::kConfig, where + "." + key + ": expected " + (std::is_floating_point_v<V>   ? "a number"
                                                                 : std::is_integral_v<V>       ? "a non-negative integer"
                                                                 : std::is_same_v<V, std::string> ? "a string"
                                                                                                  : "a list of integers"));
  }
}

inline void reject_unknown(const Json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) fail(ErrorKind::kConfig, where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) fail(ErrorKind::kConfig, where + ": unknown field '" + it.key() + "'");
  }
}

}  // namespace json_detail

// Overlays the fields present in `j` onto `c`. Unknown fields are errors.
inline void apply_json(const Json& j, ModelConfig& c, const std::string& where = "model") {
  using json_detail::read_field;
  json_detail::reject_unknown(j,
                              {"pathway", "d_model", "n_layers", "n_heads", "ff_dim", "n_classes", "conv_channels",
                               "conv_strides", "conv_kernels", "patch_size", "max_tokens", "dropout", "seed"},
                              where);
  if (j.contains("pathway")) {
    std::string p;
    read_field(j, "pathway", p, where);
    c.pathway = parse_pathway(p);
  }
  read_field(j, "d_model", c.d_model, where);
  read_field(j, "n_layers", c.n_layers, where);
  read_field(j, "n_heads", c.n_heads, where);
  read_field(j, "ff_dim", c.ff_dim, where);
  read_field(j, "n_classes", c.n_classes, where);
  read_field(j, "conv_channels", c.conv_channels, where);
  read_field(j, "conv_strides", c.conv_strides, where);
  read_field(j, "conv_kernels", c.conv_kernels, where);
  read_field(j, "patch_size", c.patch_size, where);
  read_field(j, "max_tokens", c.max_tokens, where);
  read_field(j, "dropout", c.dropout, where);
  read_field(j, "seed", c.seed, where);
}

inline void apply_json(const Json& j, SpectrogramConfig& c, const std::string& where = "spectrogram") {
  using json_detail::read_field;
  json_detail::reject_unknown(j,
                              {"window_length", "hop", "fft_size", "mel_bins", "f_min", "f_max", "log_floor",
                               "target_frames", "patch_size", "patch_stride"},
                              where);
  read_field(j, "window_length", c.window_length, where);
  read_field(j, "hop", c.hop, where);
  read_field(j, "fft_size", c.fft_size, where);
  read_field(j, "mel_bins", c.mel_bins, where);
  read_field(j, "f_min", c.f_min, where);
  read_field(j, "f_max", c.f_max, where);
  read_field(j, "log_floor", c.log_floor, where);
  read_field(j, "target_frames", c.target_frames, where);
  read_field(j, "patch_size", c.patch_size, where);
  read_field(j, "patch_stride", c.patch_stride, where);
}

// One step in a checkpoint's history: a training run or a head swap.
struct ProvenanceEntry {
  std::string operation;  // "train" or "head_swap"
  std::string dataset;
  std::size_t epochs = 0;
  Json metrics = Json::object();

  bool operator==(const ProvenanceEntry&) const = default;
};

inline Json to_json(const ProvenanceEntry& p) {
  return Json{{"operation", p.operation}, {"dataset", p.dataset}, {"epochs", p.epochs}, {"metrics", p.metrics}};
}

struct Checkpoint {
  std::uint32_t format_version = kCheckpointVersion;
  EmotionModel model;
  SpectrogramConfig spectrogram;
  std::optional<SpectrogramStats> frontend_stats;  // spectrogram pathway
  std::vector<ProvenanceEntry> provenance;

  const ModelConfig& config() const { return model.config; }
  const LabelSet& labels() const { return model.labels; }
};

inline bool bit_equal(const Checkpoint& a, const Checkpoint& b) {
  if (a.format_version != b.format_version || !(a.model.config == b.model.config) ||
      !(a.model.labels == b.model.labels) || !(a.provenance == b.provenance)) {
    return false;
  }
  if (to_json(a.spectrogram) != to_json(b.spectrogram)) return false;
  if (a.frontend_stats.has_value() != b.frontend_stats.has_value()) return false;
  if (a.frontend_stats && (std::bit_cast<std::uint64_t>(a.frontend_stats->mean) !=
                               std::bit_cast<std::uint64_t>(b.frontend_stats->mean) ||
                           std::bit_cast<std::uint64_t>(a.frontend_stats->stddev) !=
                               std::bit_cast<std::uint64_t>(b.frontend_stats->stddev))) {
    return false;
  }
  if (a.model.params.size() != b.model.params.size()) return false;
  for (const auto& [name, t] : a.model.params) {
    auto it = b.model.params.find(name);
    if (it == b.model.params.end() || !t.bit_equal(it->second)) return false;
  }
  return true;
}

namespace ckpt_detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline std::uint64_t get_le(std::span<const std::uint8_t> b, std::size_t pos, int n) {
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(b[pos + i]) << (8 * i);
  return v;
}

}  // namespace ckpt_detail

// ---- tensor container ----

struct NamedTensor {
  std::string name;
  BasicTensor<float> tensor;
};

// Writes `header` (any JSON object; a "tensors" directory is added) followed
// by the tensors' float32 payload, in the given order.
inline std::vector<std::uint8_t> write_container(Json header, std::span<const NamedTensor> tensors,
                                                 std::uint32_t version = kCheckpointVersion) {
  std::vector<std::uint8_t> payload;
  Json dir = Json::array();
  for (const auto& [name, t] : tensors) {
    dir.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}});
    for (float v : t.data()) ckpt_detail::put_u32(payload, std::bit_cast<std::uint32_t>(v));
  }
  header["tensors"] = std::move(dir);
  const std::string text = header.dump(1);

  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  ckpt_detail::put_u32(out, version);
  ckpt_detail::put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

struct Container {
  Json header;
  std::vector<NamedTensor> tensors;  // directory order
};

// Parses the framing and tensor directory. Corruption is a ParseError; a
// different format version is a VersionError.
inline Container read_container(std::span<const std::uint8_t> bytes) {
  auto corrupt = [](const std::string& why) { fail(ErrorKind::kParse, "corrupt SERF file: " + why); };
  if (bytes.size() < 16) corrupt("file too short");
  if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) corrupt("bad magic");
  const auto version = static_cast<std::uint32_t>(ckpt_detail::get_le(bytes, 4, 4));
  if (version != kCheckpointVersion) {
    fail(ErrorKind::kVersion, "SERF format version " + std::to_string(version) + " (this build reads " +
                                  std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint64_t header_len = ckpt_detail::get_le(bytes, 8, 8);
  if (header_len > bytes.size() - 16) corrupt("header extends past end of file");
  const auto payload = bytes.subspan(16 + header_len);

  Container c;
  try {
    c.header = Json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
    std::size_t end = 0;
    for (const auto& entry : c.header.at("tensors")) {
      auto name = entry.at("name").get<std::string>();
      auto shape = entry.at("shape").get<Shape>();
      auto offset = entry.at("offset").get<std::size_t>();
      const std::size_t n = shape_numel(shape);
      if (offset > payload.size() || n * 4 > payload.size() - offset) corrupt("tensor '" + name + "' is truncated");
      std::vector<float> values(n);
      for (std::size_t i = 0; i < n; ++i) {
        values[i] = std::bit_cast<float>(static_cast<std::uint32_t>(ckpt_detail::get_le(payload, offset + 4 * i, 4)));
      }
      c.tensors.push_back({std::move(name), BasicTensor<float>(std::move(shape), std::move(values))});
      end = std::max(end, offset + n * 4);
    }
    if (end != payload.size()) corrupt("payload size does not match tensor directory");
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("bad header: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kParse) throw;
    corrupt(e.what());
  }
  return c;
}

// ---- checkpoint ----

inline std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  ckpt.model.check_consistency();
  Json header;
  header["kind"] = "checkpoint";
  header["model_config"] = to_json(ckpt.model.config);
  header["labels"] = ckpt.model.labels.names();
  header["spectrogram_config"] = to_json(ckpt.spectrogram);
  if (ckpt.frontend_stats) {
    header["frontend_stats"] = {{"mean", ckpt.frontend_stats->mean}, {"std", ckpt.frontend_stats->stddev}};
  } else {
    header["frontend_stats"] = nullptr;
  }
  header["provenance"] = Json::array();
  for (const auto& p : ckpt.provenance) header["provenance"].push_back(to_json(p));
  std::vector<NamedTensor> tensors;
  for (const auto& [name, shape] : parameter_shapes(ckpt.model.config)) tensors.push_back({name, ckpt.model.param(name)});
  return write_container(std::move(header), tensors, ckpt.format_version);
}

inline Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  auto corrupt = [](const std::string& why) { fail(ErrorKind::kParse, "corrupt checkpoint: " + why); };
  Container c = read_container(bytes);
  Checkpoint ckpt;
  try {
    const Json& header = c.header;
    if (header.value("kind", "") != "checkpoint") corrupt("not a checkpoint");
    ModelConfig cfg;
    apply_json(header.at("model_config"), cfg, "model_config");
    ckpt.model.config = cfg;
    ckpt.model.labels = LabelSet(header.at("labels").get<std::vector<std::string>>());
    apply_json(header.at("spectrogram_config"), ckpt.spectrogram, "spectrogram_config");
    const auto& stats = header.at("frontend_stats");
    if (!stats.is_null()) {
      ckpt.frontend_stats = SpectrogramStats{stats.at("mean").get<double>(), stats.at("std").get<double>()};
    }
    for (const auto& p : header.at("provenance")) {
      ckpt.provenance.push_back({p.at("operation").get<std::string>(), p.at("dataset").get<std::string>(),
                                 p.at("epochs").get<std::size_t>(), p.at("metrics")});
    }
    for (auto& [name, t] : c.tensors) {
      t.set_requires_grad(true);
      if (!ckpt.model.params.emplace(name, std::move(t)).second) corrupt("duplicate tensor '" + name + "'");
    }
    ckpt.model.check_consistency();
  } catch (const nlohmann::json::exception& e) {
    corrupt(std::string("bad header: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kParse) throw;
    corrupt(e.what());
  }
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  write_file_bytes(path, serialize_checkpoint(ckpt));
}

inline Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(read_file_bytes(path)); }

}  // namespace serforge
