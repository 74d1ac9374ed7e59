// Copyright 2026 The beamclean Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "beamclean/autodiff.hpp"
#include "beamclean/dsp.hpp"

namespace beamclean::metrics {

constexpr double kSiSnrClampDb = 60.0;

// ---------------------------------------------------------------------------
// SI-SNR
// ---------------------------------------------------------------------------

/// Scale-invariant SNR in dB, clamped to [-60, +60]. Both signals are
/// zero-meaned; the reference must carry energy.
inline double si_snr(const dsp::Waveform& estimate, const dsp::Waveform& reference) {
  check(estimate.length() == reference.length(), "si_snr: length mismatch ", estimate.length(),
        " vs ", reference.length());
  const int64_t n = reference.length();
  check(n > 0, "si_snr: empty signals");
  double mean_e = 0.0, mean_r = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    mean_e += estimate.samples[static_cast<size_t>(i)];
    mean_r += reference.samples[static_cast<size_t>(i)];
  }
  mean_e /= static_cast<double>(n);
  mean_r /= static_cast<double>(n);

  double dot = 0.0, ref_energy = 0.0, est_energy = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double e = estimate.samples[static_cast<size_t>(i)] - mean_e;
    const double r = reference.samples[static_cast<size_t>(i)] - mean_r;
    dot += e * r;
    ref_energy += r * r;
    est_energy += e * e;
  }
  check(ref_energy > 0.0, "si_snr: silent reference");
  const double coef = dot / ref_energy;
  const double target_energy = coef * dot;  // |coef * r|^2
  const double err_energy = est_energy - target_energy;
  if (target_energy <= 0.0) return -kSiSnrClampDb;
  if (err_energy <= 0.0) return kSiSnrClampDb;
  const double v = 10.0 * std::log10(target_energy / err_energy);
  return std::clamp(v, -kSiSnrClampDb, kSiSnrClampDb);
}

/// Negative SI-SNR as a differentiable graph op; `reference` is constant.
inline ad::Var si_snr_loss(const ad::Var& estimate, const Tensor& reference) {
  check(estimate->value.numel() == reference.numel(), "si_snr_loss: length mismatch");
  const int64_t n = reference.numel();
  Tensor ref_zm = reference;
  const double mean_r = ref_zm.sum() / static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i) ref_zm[i] -= mean_r;
  const double ref_energy = ref_zm.dot(ref_zm);
  check(ref_energy > 0.0, "si_snr_loss: silent reference");

  using namespace ad;
  Var flat = reshape(estimate, {n});
  Var est_zm = sub_scalar_var(flat, mean_all(flat));
  Var ref_c = constant(ref_zm);
  Var coef = scale(sum_all(mul(est_zm, ref_c)), 1.0 / ref_energy);
  Var target = mul_scalar_var(ref_c, coef);
  Var err = sub(est_zm, target);
  constexpr double kEps = 1e-30;
  Var ratio = mul(add_scalar(sum_all(mul(target, target)), kEps),
                  reciprocal(add_scalar(sum_all(mul(err, err)), kEps)));
  Var snr = scale(log_op(ratio), 10.0 / std::log(10.0));
  return scale(clamp(snr, -kSiSnrClampDb, kSiSnrClampDb), -1.0);
}

// ---------------------------------------------------------------------------
// MSE
// ---------------------------------------------------------------------------

inline double mse(const Tensor& pred, const Tensor& target) {
  check(pred.same_shape(target), "mse: shape mismatch ", shape_str(pred.shape()), " vs ",
        shape_str(target.shape()));
  double s = 0.0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const double d = pred[i] - target[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.numel());
}

inline ad::Var mse_loss(const ad::Var& pred, const Tensor& target) {
  check(pred->value.same_shape(target), "mse_loss: shape mismatch ",
        shape_str(pred->value.shape()), " vs ", shape_str(target.shape()));
  ad::Var diff = ad::sub(pred, ad::constant(target));
  return ad::mean_all(ad::mul(diff, diff));
}

// ---------------------------------------------------------------------------
// Log-spectral distance
// ---------------------------------------------------------------------------

/// RMS over frames and bins of 20*(log10|est| - log10|ref|), magnitudes
/// floored; objective stand-in where perceptual metrics are out of scope.
inline double log_spectral_distance(const dsp::Waveform& estimate, const dsp::Waveform& reference,
                                    int window = 320, int hop = 160, int nfft = 512) {
  check(estimate.length() == reference.length(), "log_spectral_distance: length mismatch");
  const auto se = dsp::stft(estimate, window, hop, nfft);
  const auto sr = dsp::stft(reference, window, hop, nfft);
  double acc = 0.0;
  int64_t count = 0;
  for (int64_t n = 0; n < se.n_frames; ++n)
    for (int64_t k = 0; k < se.n_bins; ++k) {
      const double a = std::max(std::abs(se.at(n, k)), dsp::kMagnitudeFloor);
      const double b = std::max(std::abs(sr.at(n, k)), dsp::kMagnitudeFloor);
      const double d = 20.0 * (std::log10(a) - std::log10(b));
      acc += d * d;
      ++count;
    }
  return std::sqrt(acc / static_cast<double>(count));
}

// ---------------------------------------------------------------------------
// MetricReport
// ---------------------------------------------------------------------------

struct UtteranceMetrics {
  std::string id;
  double si_snr_in = 0.0;
  double lsd_in = 0.0;
  std::optional<double> si_snr_bf;   // after the beamformer
  std::optional<double> lsd_bf;
  std::optional<double> si_snr_out;  // after the enhancer
  std::optional<double> lsd_out;

  /// Metrics of whatever the last processing stage produced.
  double final_si_snr() const { return si_snr_out ? *si_snr_out : si_snr_bf ? *si_snr_bf : si_snr_in; }
  double final_lsd() const { return lsd_out ? *lsd_out : lsd_bf ? *lsd_bf : lsd_in; }
};

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;
  int64_t count = 0;
};

inline Aggregate aggregate(const std::vector<double>& xs) {
  Aggregate a;
  a.count = static_cast<int64_t>(xs.size());
  if (xs.empty()) return a;
  for (double v : xs) a.mean += v;
  a.mean /= static_cast<double>(xs.size());
  for (double v : xs) a.stddev += (v - a.mean) * (v - a.mean);
  a.stddev = std::sqrt(a.stddev / static_cast<double>(xs.size()));
  return a;
}

struct MetricReport {
  std::vector<UtteranceMetrics> rows;
  int64_t skipped = 0;  // utterances without a reference

  Aggregate column(double UtteranceMetrics::*field) const {
    std::vector<double> xs;
    for (const auto& r : rows) xs.push_back(r.*field);
    return aggregate(xs);
  }
  Aggregate column_opt(std::optional<double> UtteranceMetrics::*field) const {
    std::vector<double> xs;
    for (const auto& r : rows)
      if (r.*field) xs.push_back(*(r.*field));
    return aggregate(xs);
  }

  std::string to_text() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3);
    const bool has_bf = !rows.empty() && rows.front().si_snr_bf.has_value();
    const bool has_out = !rows.empty() && rows.front().si_snr_out.has_value();
    os << std::left << std::setw(24) << "utterance" << std::right << std::setw(12) << "si_snr_in"
       << std::setw(10) << "lsd_in";
    if (has_bf) os << std::setw(12) << "si_snr_bf" << std::setw(10) << "lsd_bf";
    if (has_out) os << std::setw(12) << "si_snr_out" << std::setw(10) << "lsd_out";
    os << "\n";
    for (const auto& r : rows) {
      os << std::left << std::setw(24) << r.id << std::right << std::setw(12) << r.si_snr_in
         << std::setw(10) << r.lsd_in;
      if (has_bf) os << std::setw(12) << r.si_snr_bf.value_or(0.0) << std::setw(10) << r.lsd_bf.value_or(0.0);
      if (has_out)
        os << std::setw(12) << r.si_snr_out.value_or(0.0) << std::setw(10) << r.lsd_out.value_or(0.0);
      os << "\n";
    }
    os << "\n# aggregates (mean / std / count)\n";
    auto line = [&](const std::string& name, const Aggregate& a) {
      os << std::left << std::setw(12) << name << std::right << std::setw(12) << a.mean
         << std::setw(12) << a.stddev << std::setw(8) << a.count << "\n";
    };
    line("si_snr_in", column(&UtteranceMetrics::si_snr_in));
    line("lsd_in", column(&UtteranceMetrics::lsd_in));
    if (has_bf) {
      line("si_snr_bf", column_opt(&UtteranceMetrics::si_snr_bf));
      line("lsd_bf", column_opt(&UtteranceMetrics::lsd_bf));
    }
    if (has_out) {
      line("si_snr_out", column_opt(&UtteranceMetrics::si_snr_out));
      line("lsd_out", column_opt(&UtteranceMetrics::lsd_out));
    }
    if (skipped > 0) os << "skipped_without_reference " << skipped << "\n";
    return os.str();
  }
};

}  // namespace beamclean::metrics
