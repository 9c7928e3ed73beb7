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

// RIFF/WAVE decoding, linear resampling and fixed-duration conditioning.
//
// Everything downstream of this header works on 16 kHz mono clips that are
// exactly five seconds long; fix_length() is where that contract is made.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "serforge/error.hpp"

namespace serforge {

inline constexpr int kModelSampleRate = 16000;
inline constexpr double kModelInputSeconds = 5.0;

struct AudioClip {
  std::vector<float> samples;
  int sample_rate = kModelSampleRate;
  std::string source_id;

  double duration_seconds() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

namespace wav_detail {

inline constexpr std::uint16_t kFormatPcm = 0x0001;
inline constexpr std::uint16_t kFormatFloat = 0x0003;
inline constexpr std::uint16_t kFormatExtensible = 0xFFFE;

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

  void skip(std::size_t n) {
    require(n);
    pos_ += n;
  }

  std::uint16_t u16() {
    require(2);
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }

  std::uint32_t u32() {
    require(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 4;
    return v;
  }

  bool tag(const char* four) {
    require(4);
    bool match = std::memcmp(bytes_.data() + pos_, four, 4) == 0;
    return match;
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    require(n);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

 private:
  void require(std::size_t n) const {
    if (remaining() < n) fail(ErrorKind::kParse, "unexpected end of RIFF data");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct FormatChunk {
  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t sample_rate = 0;
  std::uint16_t block_align = 0;
  std::uint16_t bits = 0;
};

inline float clamp_unit(float v) {
  if (std::isnan(v)) return 0.0f;
  return std::clamp(v, -1.0f, 1.0f);
}

inline float decode_sample(const std::uint8_t* p, const FormatChunk& fmt) {
  switch (fmt.bits) {
    case 8:
      return (static_cast<float>(p[0]) - 128.0f) / 128.0f;
    case 16: {
      auto v = static_cast<std::int16_t>(p[0] | (p[1] << 8));
      return static_cast<float>(v) / 32768.0f;
    }
    case 24: {
      std::int32_t v = p[0] | (p[1] << 8) | (p[2] << 16);
      if (v & 0x800000) v -= 0x1000000;
      return static_cast<float>(v) / 8388608.0f;
    }
    case 32: {
      std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                        (static_cast<std::uint32_t>(p[2]) << 16) |
                        (static_cast<std::uint32_t>(p[3]) << 24);
      if (fmt.format == kFormatFloat) {
        float f;
        std::memcpy(&f, &u, sizeof f);
        return clamp_unit(f);
      }
      return static_cast<float>(static_cast<double>(static_cast<std::int32_t>(u)) / 2147483648.0);
    }
    default:
      return 0.0f;
  }
}

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

}  // namespace wav_detail

// Decodes a little-endian RIFF/WAVE byte stream. Multi-channel frames are
// averaged to mono and integer PCM is scaled by its full-scale value.
inline AudioClip parse_wav(std::span<const std::uint8_t> bytes, std::string source_id = {}) {
  using namespace wav_detail;
  ByteReader in(bytes);
  if (in.remaining() < 12 || !in.tag("RIFF")) fail(ErrorKind::kParse, "missing RIFF tag");
  in.skip(4);
  in.u32();  // RIFF size; many writers get it wrong, chunk sizes are authoritative
  if (!in.tag("WAVE")) fail(ErrorKind::kParse, "missing WAVE tag");
  in.skip(4);

  FormatChunk fmt;
  bool have_fmt = false;
  std::span<const std::uint8_t> data;
  bool have_data = false;

  while (in.remaining() >= 8 && !have_data) {
    char id[4];
    std::memcpy(id, bytes.data() + in.position(), 4);
    in.skip(4);
    std::uint32_t size = in.u32();
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16) fail(ErrorKind::kParse, "fmt chunk too small");
      auto body = in.take(size);
      ByteReader f(body);
      fmt.format = f.u16();
      fmt.channels = f.u16();
      fmt.sample_rate = f.u32();
      f.skip(4);  // byte rate
      fmt.block_align = f.u16();
      fmt.bits = f.u16();
      if (fmt.format == kFormatExtensible) {
        if (size < 40) fail(ErrorKind::kParse, "extensible fmt chunk too small");
        f.skip(8);  // cbSize, valid bits, channel mask
        fmt.format = f.u16();  // leading bytes of the sub-format GUID
      }
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) fail(ErrorKind::kParse, "data chunk before fmt chunk");
      if (size > in.remaining()) fail(ErrorKind::kParse, "data chunk truncated");
      data = in.take(size);
      have_data = true;
    } else {
      if (size > in.remaining()) fail(ErrorKind::kParse, "chunk truncated");
      in.skip(size);
    }
    if ((size & 1u) && in.remaining() > 0 && !have_data) in.skip(1);
  }

  if (!have_fmt) fail(ErrorKind::kParse, "no fmt chunk");
  if (!have_data) fail(ErrorKind::kParse, "no data chunk");
  if (fmt.format != kFormatPcm && fmt.format != kFormatFloat) {
    fail(ErrorKind::kUnsupportedFormat, "format tag " + std::to_string(fmt.format));
  }
  bool bits_ok = fmt.format == kFormatFloat ? fmt.bits == 32
                                            : (fmt.bits == 8 || fmt.bits == 16 || fmt.bits == 24 ||
                                               fmt.bits == 32);
  if (!bits_ok) fail(ErrorKind::kUnsupportedFormat, std::to_string(fmt.bits) + "-bit samples");
  if (fmt.channels == 0 || fmt.sample_rate == 0) fail(ErrorKind::kParse, "zero channels or rate");
  std::size_t bytes_per_sample = fmt.bits / 8;
  std::size_t frame_bytes = bytes_per_sample * fmt.channels;
  if (fmt.block_align != frame_bytes) fail(ErrorKind::kParse, "inconsistent block alignment");
  if (data.size() % frame_bytes != 0) fail(ErrorKind::kParse, "data chunk ends mid-frame");

  AudioClip clip;
  clip.sample_rate = static_cast<int>(fmt.sample_rate);
  clip.source_id = std::move(source_id);
  std::size_t frames = data.size() / frame_bytes;
  clip.samples.resize(frames);
  const std::uint8_t* p = data.data();
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < fmt.channels; ++c, p += bytes_per_sample) {
      acc += decode_sample(p, fmt);
    }
    clip.samples[i] = clamp_unit(static_cast<float>(acc / fmt.channels));
  }
  return clip;
}

// 16-bit PCM mono encoder used for generated corpora and debugging.
inline std::vector<std::uint8_t> encode_wav16(const AudioClip& clip) {
  using namespace wav_detail;
  if (clip.sample_rate <= 0) fail(ErrorKind::kConfig, "sample rate must be positive");
  std::uint32_t data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (float s : clip.samples) {
    double q = std::nearbyint(static_cast<double>(clamp_unit(s)) * 32768.0);
    auto v = static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0));
    put_u16(out, static_cast<std::uint16_t>(v));
  }
  return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::kIo, "short write to " + path);
}

inline AudioClip read_wav_file(const std::string& path) {
  auto bytes = read_file_bytes(path);
  return parse_wav(bytes, path);
}

inline void write_wav_file(const std::string& path, const AudioClip& clip) {
  write_file_bytes(path, encode_wav16(clip));
}

// Linear-interpolation resampler. Output length is round(n * target / source).
inline AudioClip resample(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0) fail(ErrorKind::kConfig, "target rate must be positive");
  if (clip.sample_rate <= 0) fail(ErrorKind::kConfig, "source rate must be positive");
  if (target_rate == clip.sample_rate) return clip;

  AudioClip out;
  out.sample_rate = target_rate;
  out.source_id = clip.source_id;
  const std::size_t n = clip.samples.size();
  if (n == 0) return out;
  const double ratio = static_cast<double>(clip.sample_rate) / target_rate;
  auto out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(n) * target_rate / clip.sample_rate));
  out.samples.resize(out_len);
  for (std::size_t i = 0; i < out_len; ++i) {
    double pos = static_cast<double>(i) * ratio;
    auto i0 = static_cast<std::size_t>(pos);
    if (i0 >= n - 1) {
      out.samples[i] = clip.samples[n - 1];
      continue;
    }
    double frac = pos - static_cast<double>(i0);
    out.samples[i] = static_cast<float>(clip.samples[i0] * (1.0 - frac) + clip.samples[i0 + 1] * frac);
  }
  return out;
}

// Pads with trailing zeros or keeps the leading segment so the clip holds
// exactly round(target_seconds * sample_rate) samples.
inline AudioClip fix_length(const AudioClip& clip, double target_seconds = kModelInputSeconds) {
  if (clip.samples.empty()) fail(ErrorKind::kEmptyAudio, "clip '" + clip.source_id + "' has no samples");
  if (!(target_seconds > 0.0)) fail(ErrorKind::kConfig, "target duration must be positive");
  auto target = static_cast<std::size_t>(std::llround(target_seconds * clip.sample_rate));
  AudioClip out = clip;
  out.samples.resize(target, 0.0f);
  return out;
}

// Resample to the model rate and condition to the model input duration.
inline AudioClip condition_clip(const AudioClip& clip, int rate = kModelSampleRate,
                                double seconds = kModelInputSeconds) {
  return fix_length(resample(clip, rate), seconds);
}

}  // namespace serforge
