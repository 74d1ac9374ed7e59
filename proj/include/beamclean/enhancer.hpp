// Copyright 2026 The beamclean Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "beamclean/dsp.hpp"
#include "beamclean/nn.hpp"

namespace beamclean::enh {

using ad::Var;

/// Log-magnitude residual matrix N x K (natural log).
using ResidualGain = Tensor;

// ---------------------------------------------------------------------------
// Residual algebra
// ---------------------------------------------------------------------------

/// R(k,n) = log|X| - log|Z| with floored magnitudes.
inline ResidualGain residual_target(const dsp::Spectrogram& clean,
                                    const dsp::Spectrogram& beamformed) {
  check(clean.n_frames == beamformed.n_frames && clean.n_bins == beamformed.n_bins,
        "residual_target: shape mismatch (", clean.n_frames, "x", clean.n_bins, ") vs (",
        beamformed.n_frames, "x", beamformed.n_bins, ")");
  Tensor lx = dsp::log_magnitude(clean);
  Tensor lz = dsp::log_magnitude(beamformed);
  lx.add_scaled(lz, -1.0);
  return lx;
}

/// Magnitude exp(log|Z| + R), phase reused from the beamformed signal.
inline dsp::Spectrogram apply_residual(const dsp::Spectrogram& beamformed,
                                       const ResidualGain& residual) {
  check(residual.ndim() == 2 && residual.dim(0) == beamformed.n_frames &&
            residual.dim(1) == beamformed.n_bins,
        "apply_residual: residual ", shape_str(residual.shape()), " vs spectrogram (",
        beamformed.n_frames, "x", beamformed.n_bins, ")");
  dsp::Spectrogram out = beamformed;
  for (int64_t n = 0; n < out.n_frames; ++n)
    for (int64_t k = 0; k < out.n_bins; ++k) {
      const std::complex<double> z = beamformed.at(n, k);
      const double logmag = std::log(std::max(std::abs(z), dsp::kMagnitudeFloor));
      out.at(n, k) = std::polar(std::exp(logmag + residual.at(n, k)), std::arg(z));
    }
  return out;
}

// ---------------------------------------------------------------------------
// CLSTM configuration
// ---------------------------------------------------------------------------

/// Full-scale stack: 32@5x21, 32@5x21, 64@3x41, 64@3x41 convolutions (ReLU,
/// same padding, no pooling), parameter-free frequency pooling to 8 bins per
/// map, then LSTM 512 and LSTM 257 with a linear head over the 257 bins.
struct EnhancerConfig {
  int window = 320, hop = 160, nfft = 512;
  std::vector<int64_t> conv_filters = {32, 32, 64, 64};
  std::vector<std::pair<int64_t, int64_t>> conv_kernels = {{5, 21}, {5, 21}, {3, 41}, {3, 41}};
  int64_t pool_groups = 8;
  int64_t lstm1_hidden = 512;

  int64_t n_bins() const { return nfft / 2 + 1; }

  void validate() const {
    check(window > 0 && hop > 0 && nfft >= window && dsp::is_pow2(nfft),
          "EnhancerConfig: bad STFT parameters");
    check(hop * 2 == window, "EnhancerConfig: 50% overlap required for synthesis");
    check(!conv_filters.empty() && conv_filters.size() == conv_kernels.size(),
          "EnhancerConfig: conv stack filters/kernels mismatch");
    for (const auto& [kh, kw] : conv_kernels)
      check(kh > 0 && kw > 0 && kh % 2 == 1 && kw % 2 == 1,
            "EnhancerConfig: conv kernels must be odd for same padding");
    check(pool_groups > 0 && pool_groups <= n_bins(), "EnhancerConfig: bad pool_groups");
    check(lstm1_hidden > 0, "EnhancerConfig: bad lstm1_hidden");
  }

  static EnhancerConfig desk() {
    EnhancerConfig c;
    c.conv_filters = {8, 8, 16, 16};
    c.conv_kernels = {{5, 11}, {5, 11}, {3, 21}, {3, 21}};
    c.lstm1_hidden = 128;
    return c;
  }
};

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

class Enhancer {
 public:
  EnhancerConfig cfg;
  std::vector<nn::Conv2d> convs;
  nn::Lstm lstm1;
  nn::Lstm lstm2;   // width equals the bin count
  nn::Linear head;  // unbounded residual output over the bins

  Enhancer(const EnhancerConfig& config, Rng& rng) : cfg(config) {
    cfg.validate();
    const int64_t k = cfg.n_bins();
    convs.resize(cfg.conv_filters.size());
    int64_t cin = 1;
    for (size_t i = 0; i < convs.size(); ++i) {
      convs[i].init(cin, cfg.conv_filters[i], cfg.conv_kernels[i].first, cfg.conv_kernels[i].second,
                    rng);
      cin = cfg.conv_filters[i];
    }
    lstm1.init(cfg.conv_filters.back() * cfg.pool_groups, cfg.lstm1_hidden, rng);
    lstm2.init(cfg.lstm1_hidden, k, rng);
    head.init(k, k, rng);
    nn::canonicalize_f32(params());
  }

  nn::ParamMap params() const {
    nn::ParamMap pm;
    for (size_t i = 0; i < convs.size(); ++i) convs[i].collect("conv" + std::to_string(i), pm);
    lstm1.collect("lstm1", pm);
    lstm2.collect("lstm2", pm);
    head.collect("head", pm);
    return pm;
  }

  int64_t parameter_count() const { return nn::param_count(params()); }

  /// logmag [N,K] -> residual gain [N,K].
  Var predict_residual(const Var& logmag) const {
    const Tensor& lv = logmag->value;
    check(lv.ndim() == 2 && lv.dim(1) == cfg.n_bins(), "predict_residual: expected [N,",
          cfg.n_bins(), "], got ", shape_str(lv.shape()));
    check(lv.all_finite(), "predict_residual: non-finite input");
    const int64_t n = lv.dim(0), k = lv.dim(1);

    Var x = ad::reshape(logmag, {1, n, k});
    for (const auto& conv : convs) x = ad::relu(conv.forward(x));  // [Cout, N, K]
    const int64_t cout = cfg.conv_filters.back();

    Var pooled = ad::avg_pool_last(x, cfg.pool_groups);                    // [Cout, N, G]
    Var frames = ad::reshape(ad::permute(pooled, {1, 0, 2}), {1, n, cout * cfg.pool_groups});
    Var h1 = lstm1.forward(frames);                                        // [1, N, H1]
    Var h2 = lstm2.forward(h1);                                            // [1, N, K]
    return head.forward(ad::reshape(h2, {n, k}));                          // [N, K]
  }

  ResidualGain predict(const Tensor& logmag) const {
    ad::NoGradGuard ng;
    return predict_residual(ad::constant(logmag))->value;
  }

  /// Waveform pipeline: stft -> log magnitude -> residual -> apply -> istft,
  /// preserving the input length exactly.
  dsp::Waveform enhance(const dsp::Waveform& beamformed) const {
    check(beamformed.sample_rate == kSampleRate, "enhance: expected ", kSampleRate, " Hz input");
    const dsp::Waveform padded = dsp::pad_to_frame_grid(beamformed, cfg.window, cfg.hop);
    const dsp::Spectrogram z = dsp::stft(padded, cfg.window, cfg.hop, cfg.nfft);
    const ResidualGain r = predict(dsp::log_magnitude(z));
    dsp::Waveform out = dsp::istft(apply_residual(z, r));
    out.samples.resize(beamformed.samples.size(), 0.0);
    out.sample_rate = beamformed.sample_rate;
    return out;
  }
};

}  // namespace beamclean::enh
