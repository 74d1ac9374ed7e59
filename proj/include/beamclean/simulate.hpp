// Copyright 2026 The beamclean Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "beamclean/dsp.hpp"
#include "beamclean/rng.hpp"
#include "beamclean/tensor.hpp"

namespace beamclean::sim {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;
};

inline double distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

/// Rigid shoebox room with a single frequency-independent absorption.
struct RoomSpec {
  Vec3 dims{5.0, 4.0, 3.0};
  double absorption = 0.5;   // in (0, 1]
  int max_image_order = 2;
  double speed_of_sound = 343.0;
  int sample_rate = kSampleRate;

  void validate() const {
    check(dims.x > 0 && dims.y > 0 && dims.z > 0, "RoomSpec: non-positive dimension");
    check(absorption > 0.0 && absorption <= 1.0, "RoomSpec: absorption ", absorption,
          " outside (0,1]");
    check(max_image_order >= 0, "RoomSpec: negative image order");
  }

  bool inside(const Vec3& p) const {
    return p.x > 0 && p.x < dims.x && p.y > 0 && p.y < dims.y && p.z > 0 && p.z < dims.z;
  }
};

enum class ArrayKind { kCircular, kLinearUniform, kLinearNonuniform };

inline std::string array_kind_name(ArrayKind k) {
  switch (k) {
    case ArrayKind::kCircular: return "circular";
    case ArrayKind::kLinearUniform: return "linear_uniform";
    case ArrayKind::kLinearNonuniform: return "linear_nonuniform";
  }
  return "?";
}

inline ArrayKind array_kind_from_name(const std::string& s) {
  if (s == "circular") return ArrayKind::kCircular;
  if (s == "linear_uniform") return ArrayKind::kLinearUniform;
  if (s == "linear_nonuniform") return ArrayKind::kLinearNonuniform;
  fail("unknown array kind '", s, "'");
}

struct ArrayGeometry {
  ArrayKind kind = ArrayKind::kCircular;
  std::vector<Vec3> mic_positions;
  double height = 1.2;
};

struct MultichannelWaveform {
  Tensor channels;  // C x T
  int sample_rate = kSampleRate;
  int reference_channel = 0;

  int64_t n_channels() const { return channels.ndim() == 2 ? channels.dim(0) : 0; }
  int64_t length() const { return channels.ndim() == 2 ? channels.dim(1) : 0; }

  dsp::Waveform channel(int64_t c) const {
    dsp::Waveform w;
    w.sample_rate = sample_rate;
    w.samples.resize(static_cast<size_t>(length()));
    for (int64_t t = 0; t < length(); ++t) w.samples[static_cast<size_t>(t)] = channels.at(c, t);
    return w;
  }
};

// ---------------------------------------------------------------------------
// Image-method room impulse response
// ---------------------------------------------------------------------------

namespace detail {

constexpr int kSincHalfTaps = 4;  // 8-tap windowed-sinc fractional delay

inline double sinc(double x) {
  if (std::fabs(x) < 1e-12) return 1.0;
  return std::sin(M_PI * x) / (M_PI * x);
}

/// Adds one arrival at fractional sample delay `tau` with amplitude `amp`.
inline void add_arrival(std::vector<double>& h, double tau, double amp) {
  const int64_t n0 = static_cast<int64_t>(std::floor(tau));
  for (int64_t j = -kSincHalfTaps + 1; j <= kSincHalfTaps; ++j) {
    const int64_t n = n0 + j;
    if (n < 0 || n >= static_cast<int64_t>(h.size())) continue;
    const double x = static_cast<double>(n) - tau;
    const double win = 0.5 * (1.0 + std::cos(M_PI * x / kSincHalfTaps));
    h[static_cast<size_t>(n)] += amp * sinc(x) * win;
  }
}

}  // namespace detail

struct ImageSource {
  Vec3 position;
  int reflections = 0;
};

/// Allen-Berkley mirror-image enumeration up to `max_order` total reflections.
inline std::vector<ImageSource> image_sources(const RoomSpec& room, const Vec3& source,
                                              int max_order) {
  std::vector<ImageSource> out;
  const int mrange = max_order;  // |m| <= order suffices since refl count >= |m|
  for (int mx = -mrange; mx <= mrange; ++mx)
    for (int my = -mrange; my <= mrange; ++my)
      for (int mz = -mrange; mz <= mrange; ++mz)
        for (int px = 0; px <= 1; ++px)
          for (int py = 0; py <= 1; ++py)
            for (int pz = 0; pz <= 1; ++pz) {
              const int refl = std::abs(mx - px) + std::abs(mx) + std::abs(my - py) +
                               std::abs(my) + std::abs(mz - pz) + std::abs(mz);
              if (refl > max_order) continue;
              out.push_back({{(1 - 2 * px) * source.x + 2.0 * mx * room.dims.x,
                              (1 - 2 * py) * source.y + 2.0 * my * room.dims.y,
                              (1 - 2 * pz) * source.z + 2.0 * mz * room.dims.z},
                             refl});
            }
  return out;
}

/// Image method RIR: each image source contributes a windowed-sinc impulse at
/// delay distance/c with amplitude beta^reflections / distance.
inline dsp::Waveform image_method_rir(const RoomSpec& room, const Vec3& source, const Vec3& mic) {
  room.validate();
  check(room.inside(source), "image_method_rir: source outside the room");
  check(room.inside(mic), "image_method_rir: mic outside the room");
  check(distance(source, mic) > 1e-9, "image_method_rir: source coincides with mic");

  const double beta = std::sqrt(1.0 - room.absorption);
  const double fs = room.sample_rate;
  const double c = room.speed_of_sound;

  const auto images = image_sources(room, source, room.max_image_order);
  double max_tau = 0.0;
  for (const auto& img : images)
    max_tau = std::max(max_tau, distance(img.position, mic) / c * fs);
  dsp::Waveform h;
  h.sample_rate = room.sample_rate;
  h.samples.assign(static_cast<size_t>(std::ceil(max_tau)) + detail::kSincHalfTaps + 2, 0.0);
  for (const auto& img : images) {
    const double d = distance(img.position, mic);
    detail::add_arrival(h.samples, d / c * fs, std::pow(beta, img.reflections) / d);
  }
  return h;
}

// ---------------------------------------------------------------------------
// Array placement
// ---------------------------------------------------------------------------

struct ArrayPlacementConfig {
  int n_mics = 8;
  double radius = 0.05;        // circular
  double spacing = 0.04;       // linear
  double wall_margin = 0.1;
  double height_min = 1.0;
  double height_max = 1.5;
};

/// Random in-room placement; deterministic for a fixed seed.
inline ArrayGeometry place_array(ArrayKind kind, const RoomSpec& room, uint64_t seed,
                                 const ArrayPlacementConfig& cfg = {}) {
  room.validate();
  check(cfg.n_mics >= 2, "place_array: need at least 2 microphones");
  Rng rng(seed);

  // Per-mic horizontal offsets around the array center.
  std::vector<double> ox(static_cast<size_t>(cfg.n_mics)), oy(static_cast<size_t>(cfg.n_mics));
  const double theta0 = rng.uniform(0.0, 2.0 * M_PI);
  if (kind == ArrayKind::kCircular) {
    for (int i = 0; i < cfg.n_mics; ++i) {
      const double th = theta0 + 2.0 * M_PI * i / cfg.n_mics;
      ox[static_cast<size_t>(i)] = cfg.radius * std::cos(th);
      oy[static_cast<size_t>(i)] = cfg.radius * std::sin(th);
    }
  } else {
    std::vector<double> pos(static_cast<size_t>(cfg.n_mics), 0.0);
    for (int i = 1; i < cfg.n_mics; ++i) {
      const double gap = kind == ArrayKind::kLinearUniform
                             ? cfg.spacing
                             : rng.uniform(0.5 * cfg.spacing, 1.5 * cfg.spacing);
      pos[static_cast<size_t>(i)] = pos[static_cast<size_t>(i - 1)] + gap;
    }
    const double mid = 0.5 * (pos.front() + pos.back());
    for (int i = 0; i < cfg.n_mics; ++i) {
      const double along = pos[static_cast<size_t>(i)] - mid;
      ox[static_cast<size_t>(i)] = along * std::cos(theta0);
      oy[static_cast<size_t>(i)] = along * std::sin(theta0);
    }
  }

  double footprint = 0.0;
  for (int i = 0; i < cfg.n_mics; ++i)
    footprint = std::max(footprint, std::hypot(ox[static_cast<size_t>(i)], oy[static_cast<size_t>(i)]));

  const double m = cfg.wall_margin + footprint;
  check(room.dims.x > 2 * m && room.dims.y > 2 * m,
        "place_array: array footprint ", footprint, " m does not fit the room");
  const double height = rng.uniform(cfg.height_min, cfg.height_max);
  check(height < room.dims.z, "place_array: array height exceeds the room");

  const double cx = rng.uniform(m, room.dims.x - m);
  const double cy = rng.uniform(m, room.dims.y - m);

  ArrayGeometry geom;
  geom.kind = kind;
  geom.height = height;
  geom.mic_positions.resize(static_cast<size_t>(cfg.n_mics));
  for (int i = 0; i < cfg.n_mics; ++i) {
    geom.mic_positions[static_cast<size_t>(i)] =
        Vec3{cx + ox[static_cast<size_t>(i)], cy + oy[static_cast<size_t>(i)], height};
    check(room.inside(geom.mic_positions[static_cast<size_t>(i)]), "place_array: mic ", i,
          " landed outside the room");
  }
  return geom;
}

// ---------------------------------------------------------------------------
// Mixing
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> loop_or_trim(const std::vector<double>& x, int64_t t_out,
                                        int64_t start = 0) {
  check(!x.empty(), "loop_or_trim: empty signal");
  std::vector<double> out(static_cast<size_t>(t_out));
  const int64_t n = static_cast<int64_t>(x.size());
  for (int64_t t = 0; t < t_out; ++t) out[static_cast<size_t>(t)] = x[static_cast<size_t>((start + t) % n)];
  return out;
}

inline std::vector<double> convolve_trim(const std::vector<double>& x,
                                         const std::vector<double>& h, int64_t t_out) {
  std::vector<double> y(static_cast<size_t>(t_out), 0.0);
  const int64_t nx = static_cast<int64_t>(x.size());
  const int64_t nh = static_cast<int64_t>(h.size());
  for (int64_t k = 0; k < nh; ++k) {
    const double hk = h[static_cast<size_t>(k)];
    if (hk == 0.0) continue;
    const int64_t lo = k;
    const int64_t hi = std::min<int64_t>(t_out, nx + k);
    for (int64_t t = lo; t < hi; ++t) y[static_cast<size_t>(t)] += hk * x[static_cast<size_t>(t - k)];
  }
  return y;
}

inline double energy(const std::vector<double>& x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

}  // namespace detail

struct MixtureResult {
  MultichannelWaveform mixture;
  dsp::Waveform target;  // direct-path clean image at the reference mic
};

/// Reverberant clean + scaled reverberant noise at the requested
/// reference-channel SNR. snr_db = +inf yields the clean image only.
inline MixtureResult simulate_mixture(const dsp::Waveform& clean, const dsp::Waveform& noise,
                                      const RoomSpec& room, const ArrayGeometry& array,
                                      const Vec3& source_pos, const Vec3& noise_pos,
                                      double snr_db, uint64_t seed, int64_t t_out = 64000,
                                      int reference_channel = 0) {
  room.validate();
  check(!array.mic_positions.empty(), "simulate_mixture: empty array");
  check(reference_channel >= 0 &&
            reference_channel < static_cast<int>(array.mic_positions.size()),
        "simulate_mixture: bad reference channel");
  check(!std::isnan(snr_db), "simulate_mixture: NaN SNR");
  check(room.inside(source_pos), "simulate_mixture: speech source outside the room");
  check(room.inside(noise_pos), "simulate_mixture: noise source outside the room");

  Rng rng(seed);
  const int64_t noise_start = rng.uniform_int(0, static_cast<int64_t>(noise.samples.size()) - 1);
  const std::vector<double> cln = detail::loop_or_trim(clean.samples, t_out);
  const std::vector<double> nse = detail::loop_or_trim(noise.samples, t_out, noise_start);
  check(detail::energy(cln) > 0.0, "simulate_mixture: silent clean input (SNR undefined)");
  check(detail::energy(nse) > 0.0, "simulate_mixture: silent noise input (SNR undefined)");

  const int64_t n_ch = static_cast<int64_t>(array.mic_positions.size());
  std::vector<std::vector<double>> clean_img(static_cast<size_t>(n_ch));
  std::vector<std::vector<double>> noise_img(static_cast<size_t>(n_ch));
  for (int64_t i = 0; i < n_ch; ++i) {
    const Vec3& mic = array.mic_positions[static_cast<size_t>(i)];
    clean_img[static_cast<size_t>(i)] =
        detail::convolve_trim(cln, image_method_rir(room, source_pos, mic).samples, t_out);
    noise_img[static_cast<size_t>(i)] =
        detail::convolve_trim(nse, image_method_rir(room, noise_pos, mic).samples, t_out);
  }

  const double e_clean = detail::energy(clean_img[static_cast<size_t>(reference_channel)]);
  const double e_noise = detail::energy(noise_img[static_cast<size_t>(reference_channel)]);
  check(e_clean > 0.0 && e_noise > 0.0, "simulate_mixture: zero reference-channel image energy");
  const double gain =
      std::isinf(snr_db) ? 0.0 : std::sqrt(e_clean / e_noise) * std::pow(10.0, -snr_db / 20.0);

  MixtureResult res;
  res.mixture.sample_rate = room.sample_rate;
  res.mixture.reference_channel = reference_channel;
  res.mixture.channels = Tensor({n_ch, t_out});
  for (int64_t i = 0; i < n_ch; ++i)
    for (int64_t t = 0; t < t_out; ++t)
      res.mixture.channels.at(i, t) = clean_img[static_cast<size_t>(i)][static_cast<size_t>(t)] +
                                      gain * noise_img[static_cast<size_t>(i)][static_cast<size_t>(t)];

  RoomSpec direct = room;
  direct.max_image_order = 0;
  const auto rir0 =
      image_method_rir(direct, source_pos, array.mic_positions[static_cast<size_t>(reference_channel)]);
  res.target.sample_rate = room.sample_rate;
  res.target.samples = detail::convolve_trim(cln, rir0.samples, t_out);
  return res;
}

// ---------------------------------------------------------------------------
// Synthetic desk-scale sources (corpus ingestion is out of scope)
// ---------------------------------------------------------------------------

namespace detail {

/// Two-pole resonator, r fixed at 0.97.
struct Resonator {
  double a1 = 0.0, a2 = 0.0, y1 = 0.0, y2 = 0.0;
  explicit Resonator(double freq_hz, double fs) {
    const double r = 0.97;
    a1 = 2.0 * r * std::cos(2.0 * M_PI * freq_hz / fs);
    a2 = -r * r;
  }
  double step(double x) {
    const double y = x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

inline void normalize_peak(std::vector<double>& x, double peak) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::fabs(v));
  if (m <= 0.0) return;
  for (double& v : x) v *= peak / m;
}

}  // namespace detail

/// Speech-like surrogate: voiced harmonic bursts shaped by formant resonators,
/// interleaved with unvoiced noise and short silences.
inline dsp::Waveform synth_speech(Rng& rng, int64_t t_out, int sample_rate = kSampleRate) {
  dsp::Waveform w;
  w.sample_rate = sample_rate;
  w.samples.assign(static_cast<size_t>(t_out), 0.0);
  const double fs = sample_rate;
  int64_t t = 0;
  while (t < t_out) {
    const int64_t seg = static_cast<int64_t>(rng.uniform(0.08, 0.22) * fs);
    // the opening segment is always voiced so short clips are never silent
    const double kind = t == 0 ? 0.0 : rng.uniform();
    if (kind < 0.68) {  // voiced
      const double f0 = rng.uniform(100.0, 220.0);
      const double drift = rng.uniform(-20.0, 20.0);
      detail::Resonator f1(rng.uniform(350.0, 900.0), fs);
      detail::Resonator f2(rng.uniform(1100.0, 2600.0), fs);
      double phase = rng.uniform(0.0, 2.0 * M_PI);
      for (int64_t i = 0; i < seg && t + i < t_out; ++i) {
        const double tt = static_cast<double>(i) / fs;
        const double f = f0 + drift * tt / 0.2;
        phase += 2.0 * M_PI * f / fs;
        double pulse = 0.0;
        for (int har = 1; har <= 8; ++har) pulse += std::sin(har * phase) / har;
        const double env = std::sin(M_PI * static_cast<double>(i) / static_cast<double>(seg));
        w.samples[static_cast<size_t>(t + i)] = 0.02 * env * f2.step(f1.step(pulse));
      }
    } else if (kind < 0.85) {  // unvoiced
      detail::Resonator hiss(rng.uniform(2500.0, 5000.0), fs);
      for (int64_t i = 0; i < seg && t + i < t_out; ++i) {
        const double env = std::sin(M_PI * static_cast<double>(i) / static_cast<double>(seg));
        w.samples[static_cast<size_t>(t + i)] = 0.006 * env * hiss.step(rng.normal());
      }
    }  // else silence
    t += seg + static_cast<int64_t>(rng.uniform(0.01, 0.05) * fs);
  }
  detail::normalize_peak(w.samples, 0.5);
  return w;
}

/// Stationary colored noise (one-pole lowpassed white noise, slow AM).
inline dsp::Waveform synth_noise(Rng& rng, int64_t t_out, int sample_rate = kSampleRate) {
  dsp::Waveform w;
  w.sample_rate = sample_rate;
  w.samples.assign(static_cast<size_t>(t_out), 0.0);
  const double pole = rng.uniform(0.8, 0.97);
  const double am_freq = rng.uniform(0.3, 2.0);
  double y = 0.0;
  for (int64_t t = 0; t < t_out; ++t) {
    y = pole * y + (1.0 - pole) * rng.normal();
    const double am = 1.0 + 0.3 * std::sin(2.0 * M_PI * am_freq * t / sample_rate);
    w.samples[static_cast<size_t>(t)] = y * am;
  }
  detail::normalize_peak(w.samples, 0.5);
  return w;
}

}  // namespace beamclean::sim
