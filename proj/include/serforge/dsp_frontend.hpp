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

// Feature front end for the two model pathways: a zero-mean unit-variance
// waveform for the raw-audio encoder, and a log-mel grid cut into
// overlapping 16x16 patches for the spectrogram encoder.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "serforge/audio_io.hpp"
#include "serforge/error.hpp"

namespace serforge {

struct SpectrogramConfig {
  std::size_t window_length = 400;  // 25 ms at 16 kHz
  std::size_t hop = 160;            // 10 ms at 16 kHz
  std::size_t fft_size = 512;
  std::size_t mel_bins = 128;
  double f_min = 0.0;
  double f_max = 8000.0;
  double log_floor = 1e-10;
  std::size_t target_frames = 512;
  std::size_t patch_size = 16;
  std::size_t patch_stride = 10;

  void validate(int sample_rate) const {
    if (window_length == 0 || hop == 0) fail(ErrorKind::kConfig, "window and hop must be positive");
    if (hop > window_length) fail(ErrorKind::kConfig, "hop exceeds window length");
    if (fft_size < window_length) fail(ErrorKind::kConfig, "fft_size smaller than window");
    if (mel_bins < 2) fail(ErrorKind::kConfig, "need at least two mel bins");
    if (!(f_min >= 0.0 && f_min < f_max)) fail(ErrorKind::kConfig, "need 0 <= f_min < f_max");
    if (f_max > sample_rate / 2.0) fail(ErrorKind::kConfig, "f_max above Nyquist");
    if (!(log_floor > 0.0)) fail(ErrorKind::kConfig, "log_floor must be positive");
    if (target_frames == 0) fail(ErrorKind::kConfig, "target_frames must be positive");
    if (patch_size == 0 || patch_stride == 0) fail(ErrorKind::kConfig, "patch geometry must be positive");
  }
};

// Row-major [bins x frames] power values.
struct PowerSpectrogram {
  std::size_t bins = 0;
  std::size_t frames = 0;
  std::vector<float> values;

  float at(std::size_t bin, std::size_t frame) const { return values[bin * frames + frame]; }
};

// Row-major [mel_bins x frames] natural-log mel energies.
struct MelSpectrogram {
  std::size_t mel_bins = 0;
  std::size_t frames = 0;
  std::vector<float> values;

  float at(std::size_t bin, std::size_t frame) const { return values[bin * frames + frame]; }
  float& at(std::size_t bin, std::size_t frame) { return values[bin * frames + frame]; }
};

// Flattened patches; patch p occupies values[p * patch_size^2, (p + 1) * patch_size^2).
struct PatchSequence {
  std::size_t patch_size = 16;
  std::size_t n_freq_patches = 0;
  std::size_t n_time_patches = 0;
  std::vector<float> values;

  std::size_t patch_values() const { return patch_size * patch_size; }
  std::size_t size() const { return n_freq_patches * n_time_patches; }
  std::span<const float> patch(std::size_t p) const {
    return std::span<const float>(values).subspan(p * patch_values(), patch_values());
  }
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Symmetric Hann window; both endpoints are exactly zero.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (n < 2) return w;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  w.front() = 0.0;
  w.back() = 0.0;
  return w;
}

namespace dsp_detail {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 FFT, forward, unnormalized.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        auto u = a[i + k];
        auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// |X_k|^2 for k = 0..n/2 of a real frame of length n.
inline void power_spectrum(std::span<const double> frame, std::span<double> out) {
  const std::size_t n = frame.size();
  if (is_power_of_two(n)) {
    std::vector<std::complex<double>> a(frame.begin(), frame.end());
    fft_radix2(a);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = std::norm(a[k]);
    return;
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::complex<double> acc(0.0, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      double ang = -2.0 * std::numbers::pi * static_cast<double>(k * t % n) / static_cast<double>(n);
      acc += frame[t] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = std::norm(acc);
  }
}

// Integral of the triangle (left, center, right) with unit peak over [a, b].
inline double triangle_area(double a, double b, double left, double center, double right) {
  double area = 0.0;
  double lo = std::max(a, left), hi = std::min(b, center);
  if (hi > lo) {
    double s = center - left;
    area += ((hi - left) * (hi - left) - (lo - left) * (lo - left)) / (2.0 * s);
  }
  lo = std::max(a, center);
  hi = std::min(b, right);
  if (hi > lo) {
    double s = right - center;
    area += ((right - lo) * (right - lo) - (right - hi) * (right - hi)) / (2.0 * s);
  }
  return area;
}

}  // namespace dsp_detail

// Zero-mean, unit (population) variance copy of the clip. Constant clips map
// to zeros.
inline std::vector<float> normalize_waveform(std::span<const float> samples) {
  if (samples.size() < 2) fail(ErrorKind::kTooShort, "need at least two samples to normalize");
  std::vector<float> out(samples.size(), 0.0f);
  if (std::all_of(samples.begin(), samples.end(), [&](float v) { return v == samples.front(); })) {
    return out;
  }
  double mean = 0.0;
  for (float v : samples) mean += v;
  mean /= static_cast<double>(samples.size());
  double var = 0.0;
  for (float v : samples) var += (v - mean) * (v - mean);
  var /= static_cast<double>(samples.size());
  const double inv_std = 1.0 / std::sqrt(var);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out[i] = static_cast<float>((samples[i] - mean) * inv_std);
  }
  return out;
}

inline std::vector<float> normalize_waveform(const AudioClip& clip) { return normalize_waveform(clip.samples); }

// Hann-windowed short-time power spectrum, bins 0..fft_size/2.
inline PowerSpectrogram stft_power(std::span<const float> waveform, const SpectrogramConfig& cfg) {
  if (cfg.window_length == 0 || cfg.hop == 0 || cfg.fft_size < cfg.window_length) {
    fail(ErrorKind::kConfig, "invalid STFT geometry");
  }
  if (waveform.size() < cfg.window_length) {
    fail(ErrorKind::kTooShort, "waveform of " + std::to_string(waveform.size()) +
                                   " samples is shorter than one window");
  }
  PowerSpectrogram out;
  out.bins = cfg.fft_size / 2 + 1;
  out.frames = (waveform.size() - cfg.window_length) / cfg.hop + 1;
  out.values.assign(out.bins * out.frames, 0.0f);

  const auto window = hann_window(cfg.window_length);
  std::vector<double> frame(cfg.fft_size, 0.0);
  std::vector<double> power(out.bins, 0.0);
  for (std::size_t t = 0; t < out.frames; ++t) {
    const std::size_t start = t * cfg.hop;
    std::fill(frame.begin(), frame.end(), 0.0);
    for (std::size_t i = 0; i < cfg.window_length; ++i) frame[i] = window[i] * waveform[start + i];
    dsp_detail::power_spectrum(frame, power);
    for (std::size_t k = 0; k < out.bins; ++k) out.values[k * out.frames + t] = static_cast<float>(power[k]);
  }
  return out;
}

// Triangular mel filters. Each weight is the triangle's mean value over the
// FFT bin's frequency interval [f_k - df/2, f_k + df/2], so narrow low
// frequency filters still reach the bin they overlap. Adjacent triangles
// form a partition of unity, so interior columns sum to one.
class MelFilterbank {
 public:
  MelFilterbank() = default;

  MelFilterbank(const SpectrogramConfig& cfg, int sample_rate) {
    cfg.validate(sample_rate);
    rows_ = cfg.mel_bins;
    cols_ = cfg.fft_size / 2 + 1;
    const double df = static_cast<double>(sample_rate) / static_cast<double>(cfg.fft_size);
    const double nyquist = sample_rate / 2.0;
    const double mel_lo = hz_to_mel(cfg.f_min), mel_hi = hz_to_mel(cfg.f_max);
    edges_hz_.resize(rows_ + 2);
    for (std::size_t i = 0; i < rows_ + 2; ++i) {
      edges_hz_[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / static_cast<double>(rows_ + 1));
    }
    edges_hz_.front() = cfg.f_min;
    edges_hz_.back() = cfg.f_max;

    weights_.assign(rows_ * cols_, 0.0f);
    first_.assign(rows_, 0);
    last_.assign(rows_, 0);
    for (std::size_t m = 0; m < rows_; ++m) {
      const double left = edges_hz_[m], center = edges_hz_[m + 1], right = edges_hz_[m + 2];
      // A filter whose support sits inside one bin interval cannot be told
      // apart from a plain bin: it has zero width at this FFT resolution.
      auto bin_of = [&](double f) { return std::floor(f / df + 0.5); };
      if (!(center > left && right > center) || bin_of(left) == bin_of(right)) {
        fail(ErrorKind::kDegenerateFilter,
             "mel filter " + std::to_string(m) + " is narrower than one FFT bin");
      }
      bool any = false;
      for (std::size_t k = 0; k < cols_; ++k) {
        const double fk = static_cast<double>(k) * df;
        const double a = std::max(0.0, fk - df / 2.0), b = std::min(nyquist, fk + df / 2.0);
        const double w = dsp_detail::triangle_area(a, b, left, center, right) / df;
        if (w <= 0.0) continue;
        weights_[m * cols_ + k] = static_cast<float>(w);
        if (!any) first_[m] = k;
        last_[m] = k + 1;
        any = true;
      }
      if (!any) fail(ErrorKind::kDegenerateFilter, "mel filter " + std::to_string(m) + " is empty");
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  float weight(std::size_t mel, std::size_t bin) const { return weights_[mel * cols_ + bin]; }
  std::span<const float> weights() const { return weights_; }
  // Filter centers in Hz (edges_hz()[m + 1] is the peak of filter m).
  std::span<const double> edges_hz() const { return edges_hz_; }
  std::size_t first_bin(std::size_t mel) const { return first_[mel]; }
  std::size_t end_bin(std::size_t mel) const { return last_[mel]; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> weights_;
  std::vector<double> edges_hz_;
  std::vector<std::size_t> first_;
  std::vector<std::size_t> last_;
};

inline MelFilterbank mel_filterbank(const SpectrogramConfig& cfg, int sample_rate = kModelSampleRate) {
  return MelFilterbank(cfg, sample_rate);
}

// ln(max(fb . power, floor)) per frame, then padded with ln(floor) columns or
// truncated to target_frames.
inline MelSpectrogram log_mel(const PowerSpectrogram& power, const MelFilterbank& fb, double log_floor,
                              std::size_t target_frames) {
  if (power.bins != fb.cols()) {
    fail(ErrorKind::kShape, "power grid has " + std::to_string(power.bins) + " bins, filterbank expects " +
                                std::to_string(fb.cols()));
  }
  if (!(log_floor > 0.0)) fail(ErrorKind::kConfig, "log_floor must be positive");
  MelSpectrogram out;
  out.mel_bins = fb.rows();
  out.frames = target_frames;
  const auto floor_value = static_cast<float>(std::log(log_floor));
  out.values.assign(out.mel_bins * out.frames, floor_value);
  const std::size_t used = std::min(power.frames, target_frames);
  for (std::size_t m = 0; m < fb.rows(); ++m) {
    for (std::size_t t = 0; t < used; ++t) {
      double acc = 0.0;
      for (std::size_t k = fb.first_bin(m); k < fb.end_bin(m); ++k) {
        acc += static_cast<double>(fb.weight(m, k)) * power.values[k * power.frames + t];
      }
      out.values[m * out.frames + t] = static_cast<float>(std::log(std::max(acc, log_floor)));
    }
  }
  return out;
}

inline MelSpectrogram normalize_spectrogram(const MelSpectrogram& spec, double mean, double stddev) {
  if (!(stddev > 0.0) || !std::isfinite(stddev) || !std::isfinite(mean)) {
    fail(ErrorKind::kBadStats, "normalization needs finite mean and std > 0");
  }
  MelSpectrogram out = spec;
  for (auto& v : out.values) v = static_cast<float>((v - mean) / stddev);
  return out;
}

struct SpectrogramStats {
  double mean = 0.0;
  double stddev = 1.0;
};

// Global mean / population std over the cells of a set of grids. Cells at
// the log floor (zero-power padding and digital silence) are left out: with
// them, the statistics describe how much of each clip is padding rather
// than the spectral content, and normalized speech cells collapse into a
// narrow band.
inline SpectrogramStats spectrogram_stats(std::span<const MelSpectrogram> specs, double log_floor = 1e-10) {
  const auto floor_value = static_cast<float>(std::log(log_floor));
  double sum = 0.0, sum_sq = 0.0;
  std::size_t count = 0;
  for (const auto& s : specs) {
    for (float v : s.values) {
      if (v <= floor_value) continue;
      sum += v;
      sum_sq += static_cast<double>(v) * v;
      ++count;
    }
  }
  if (count == 0) fail(ErrorKind::kBadStats, "no spectrogram cells above the log floor");
  SpectrogramStats st;
  st.mean = sum / static_cast<double>(count);
  double var = sum_sq / static_cast<double>(count) - st.mean * st.mean;
  st.stddev = var > 0.0 ? std::sqrt(var) : 0.0;
  if (!(st.stddev > 0.0)) fail(ErrorKind::kBadStats, "spectrogram cells have zero variance");
  return st;
}

// Overlapping square patches, enumerated time-major (every frequency patch of
// time index 0 first). Each patch is flattened row-major, frequency rows by
// time columns.
inline PatchSequence patchify(const MelSpectrogram& spec, std::size_t patch = 16, std::size_t stride = 10) {
  if (patch == 0 || stride == 0) fail(ErrorKind::kConfig, "patch size and stride must be positive");
  if (spec.mel_bins < patch || spec.frames < patch) {
    fail(ErrorKind::kTooSmall, std::to_string(spec.mel_bins) + "x" + std::to_string(spec.frames) +
                                   " grid is smaller than one " + std::to_string(patch) + "x" +
                                   std::to_string(patch) + " patch");
  }
  PatchSequence out;
  out.patch_size = patch;
  out.n_freq_patches = (spec.mel_bins - patch) / stride + 1;
  out.n_time_patches = (spec.frames - patch) / stride + 1;
  out.values.resize(out.size() * patch * patch);
  float* dst = out.values.data();
  for (std::size_t tp = 0; tp < out.n_time_patches; ++tp) {
    for (std::size_t fp = 0; fp < out.n_freq_patches; ++fp) {
      for (std::size_t r = 0; r < patch; ++r) {
        const float* src = spec.values.data() + (fp * stride + r) * spec.frames + tp * stride;
        dst = std::copy(src, src + patch, dst);
      }
    }
  }
  return out;
}

// Conditioned clip -> log-mel grid, padded/truncated to cfg.target_frames.
inline MelSpectrogram log_mel_spectrogram(std::span<const float> samples, const SpectrogramConfig& cfg,
                                          const MelFilterbank& fb) {
  return log_mel(stft_power(samples, cfg), fb, cfg.log_floor, cfg.target_frames);
}

}  // namespace serforge
