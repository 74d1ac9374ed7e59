// Copyright 2026 The beamclean Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "beamclean/common.hpp"
#include "beamclean/tensor.hpp"

namespace beamclean::dsp {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct Waveform {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  int64_t length() const { return static_cast<int64_t>(samples.size()); }
};

/// Complex STFT frames, N x K with K = nfft/2 + 1.
struct Spectrogram {
  std::vector<std::complex<double>> frames;  // row-major N x K
  int64_t n_frames = 0;
  int64_t n_bins = 0;
  int window_size = 320;
  int hop = 160;
  int nfft = 512;

  std::complex<double>& at(int64_t n, int64_t k) {
    return frames[static_cast<size_t>(n * n_bins + k)];
  }
  std::complex<double> at(int64_t n, int64_t k) const {
    return frames[static_cast<size_t>(n * n_bins + k)];
  }
};

/// N frames of length L, consecutive frames offset by hop in the source.
struct FrameStack {
  Tensor frames;  // N x L
  int hop = 0;
};

// ---------------------------------------------------------------------------
// Windows and FFT
// ---------------------------------------------------------------------------

/// Periodic Hann; exact constant-overlap-add at 50% overlap.
inline std::vector<double> hann_window(int length) {
  check(length > 0, "hann_window: non-positive length");
  std::vector<double> w(static_cast<size_t>(length));
  for (int k = 0; k < length; ++k)
    w[static_cast<size_t>(k)] = 0.5 * (1.0 - std::cos(2.0 * M_PI * k / length));
  return w;
}

inline bool is_pow2(int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

/// In-place iterative radix-2 FFT (inverse applies the 1/n scale).
inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
  const size_t n = a.size();
  check(is_pow2(static_cast<int64_t>(n)), "fft: length ", n, " is not a power of two");
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * M_PI / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse)
    for (auto& x : a) x /= static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Framing
// ---------------------------------------------------------------------------

/// Slices `wave` into frames of `frame_len` every `hop` samples after zero
/// padding `pad` samples on each side. A trailing partial frame is dropped.
inline FrameStack frame_signal(const Waveform& wave, int frame_len, int hop, int pad) {
  check(frame_len > 0 && hop > 0, "frame_signal: frame_len and hop must be positive");
  check(pad >= 0, "frame_signal: negative pad");
  const int64_t t = wave.length();
  const int64_t padded = t + 2 * static_cast<int64_t>(pad);
  check(padded >= frame_len, "frame_signal: ", t, " samples (+", pad,
        " pad per side) shorter than frame_len ", frame_len);
  const int64_t n = 1 + (padded - frame_len) / hop;
  FrameStack out;
  out.hop = hop;
  out.frames = Tensor({n, frame_len});
  for (int64_t i = 0; i < n; ++i) {
    const int64_t start = i * hop - pad;
    for (int64_t k = 0; k < frame_len; ++k) {
      const int64_t src = start + k;
      out.frames.at(i, k) = (src >= 0 && src < t) ? wave.samples[static_cast<size_t>(src)] : 0.0;
    }
  }
  return out;
}

/// Sums frames at their hop offsets; output length (N-1)*hop + L.
inline Waveform overlap_add(const FrameStack& stack) {
  check(stack.hop > 0, "overlap_add: missing hop metadata");
  const int64_t n = stack.frames.ndim() == 2 ? stack.frames.dim(0) : 0;
  check(n > 0, "overlap_add: empty frame stack");
  const int64_t l = stack.frames.dim(1);
  Waveform out;
  out.samples.assign(static_cast<size_t>((n - 1) * stack.hop + l), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t k = 0; k < l; ++k)
      out.samples[static_cast<size_t>(i * stack.hop + k)] += stack.frames.at(i, k);
  return out;
}

// ---------------------------------------------------------------------------
// STFT / iSTFT
// ---------------------------------------------------------------------------

inline Spectrogram stft(const Waveform& wave, int window_size = 320, int hop = 160,
                        int nfft = 512) {
  check(window_size <= nfft, "stft: window_size ", window_size, " > nfft ", nfft);
  check(hop > 0 && hop <= window_size, "stft: hop ", hop, " out of (0, window_size]");
  check(is_pow2(nfft), "stft: nfft must be a power of two, got ", nfft);
  check(wave.length() >= window_size, "stft: wave of ", wave.length(),
        " samples shorter than window_size ", window_size);

  const std::vector<double> win = hann_window(window_size);
  Spectrogram spec;
  spec.window_size = window_size;
  spec.hop = hop;
  spec.nfft = nfft;
  spec.n_bins = nfft / 2 + 1;
  spec.n_frames = 1 + (wave.length() - window_size) / hop;
  spec.frames.assign(static_cast<size_t>(spec.n_frames * spec.n_bins), {0.0, 0.0});

  std::vector<std::complex<double>> buf(static_cast<size_t>(nfft));
  for (int64_t i = 0; i < spec.n_frames; ++i) {
    std::fill(buf.begin(), buf.end(), std::complex<double>(0.0, 0.0));
    const int64_t start = i * hop;
    for (int k = 0; k < window_size; ++k)
      buf[static_cast<size_t>(k)] = wave.samples[static_cast<size_t>(start + k)] *
                                    win[static_cast<size_t>(k)];
    fft_inplace(buf, false);
    for (int64_t k = 0; k < spec.n_bins; ++k) spec.at(i, k) = buf[static_cast<size_t>(k)];
  }
  return spec;
}

/// Weighted overlap-add synthesis with the analysis Hann window; exact
/// round trip wherever the squared-window coverage is non-zero.
inline Waveform istft(const Spectrogram& spec) {
  check(spec.n_frames > 0 && spec.n_bins > 0, "istft: empty spectrogram");
  check(spec.n_bins == spec.nfft / 2 + 1, "istft: n_bins ", spec.n_bins,
        " inconsistent with nfft ", spec.nfft);
  check(spec.hop * 2 == spec.window_size, "istft: window/hop (", spec.window_size, "/", spec.hop,
        ") violate the 50%-overlap constant-overlap-add requirement");
  check(spec.window_size <= spec.nfft, "istft: window_size > nfft");

  const std::vector<double> win = hann_window(spec.window_size);
  const int64_t out_len = (spec.n_frames - 1) * spec.hop + spec.window_size;
  std::vector<double> num(static_cast<size_t>(out_len), 0.0);
  std::vector<double> den(static_cast<size_t>(out_len), 0.0);

  std::vector<std::complex<double>> buf(static_cast<size_t>(spec.nfft));
  for (int64_t i = 0; i < spec.n_frames; ++i) {
    for (int64_t k = 0; k < spec.n_bins; ++k) buf[static_cast<size_t>(k)] = spec.at(i, k);
    for (int64_t k = spec.n_bins; k < spec.nfft; ++k)
      buf[static_cast<size_t>(k)] = std::conj(spec.at(i, spec.nfft - k));
    fft_inplace(buf, true);
    const int64_t start = i * spec.hop;
    for (int k = 0; k < spec.window_size; ++k) {
      const double w = win[static_cast<size_t>(k)];
      num[static_cast<size_t>(start + k)] += w * buf[static_cast<size_t>(k)].real();
      den[static_cast<size_t>(start + k)] += w * w;
    }
  }

  Waveform out;
  out.samples.assign(static_cast<size_t>(out_len), 0.0);
  for (int64_t t = 0; t < out_len; ++t) {
    const double d = den[static_cast<size_t>(t)];
    out.samples[static_cast<size_t>(t)] = d > 1e-12 ? num[static_cast<size_t>(t)] / d : 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Features
// ---------------------------------------------------------------------------

constexpr double kMagnitudeFloor = 1e-8;

/// Cosine similarity <a,b> / (|a| |b|); zero-norm inputs yield 0, never NaN.
inline double ncc(const std::vector<double>& a, const std::vector<double>& b) {
  check(a.size() == b.size(), "ncc: length mismatch ", a.size(), " vs ", b.size());
  check(!a.empty(), "ncc: empty vectors");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    log_warn("ncc: zero-norm input, returning 0");
    return 0.0;
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// log(max(|spec|, floor)) as an N x K tensor.
inline Tensor log_magnitude(const Spectrogram& spec, double floor = kMagnitudeFloor) {
  check(floor > 0.0, "log_magnitude: floor must be positive");
  Tensor out({spec.n_frames, spec.n_bins});
  for (int64_t n = 0; n < spec.n_frames; ++n)
    for (int64_t k = 0; k < spec.n_bins; ++k)
      out.at(n, k) = std::log(std::max(std::abs(spec.at(n, k)), floor));
  return out;
}

/// Zero-pads `wave` so the 50%-overlap STFT frame grid covers it exactly.
inline Waveform pad_to_frame_grid(const Waveform& wave, int window_size, int hop) {
  const int64_t t = wave.length();
  int64_t padded = window_size;
  if (t > window_size) {
    const int64_t steps = (t - window_size + hop - 1) / hop;
    padded = window_size + steps * hop;
  }
  Waveform out = wave;
  out.samples.resize(static_cast<size_t>(std::max(t, padded)), 0.0);
  return out;
}

}  // namespace beamclean::dsp
