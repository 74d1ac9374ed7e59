// Copyright 2026 The beamclean Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "beamclean/beamformer.hpp"
#include "beamclean/checkpoint.hpp"
#include "beamclean/enhancer.hpp"
#include "beamclean/losses.hpp"

namespace beamclean::train {

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  int64_t batch_size = 4;
  int64_t epochs = 30;
  uint64_t seed = 0;
  double grad_clip = 5.0;  // global norm; 0 disables
  std::string diagnostic_path;  // where a NaN-loss snapshot is written, if set

  void validate() const {
    check(learning_rate > 0.0 && weight_decay >= 0.0 && batch_size >= 1 && epochs >= 0 &&
              grad_clip >= 0.0,
          "TrainConfig: invalid values");
  }
};

struct TrainItem {
  sim::MultichannelWaveform mixture;
  std::optional<dsp::Waveform> target;  // direct-path clean at the reference mic
  std::string id;
};
using Dataset = std::vector<TrainItem>;

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam with L2-style weight decay folded into the gradient.
class Adam {
 public:
  Adam(double lr, double weight_decay)
      : lr_(lr), weight_decay_(weight_decay) {}

  void step(const nn::ParamMap& params) {
    if (m_.empty()) {
      for (const auto& [name, p] : params) {
        m_.emplace_back(p->value.shape());
        v_.emplace_back(p->value.shape());
      }
    }
    check(m_.size() == params.size(), "Adam: parameter set changed between steps");
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      const auto& p = params[i].second;
      if (!p->has_grad) continue;
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (int64_t j = 0; j < p->value.numel(); ++j) {
        const double g = p->grad[j] + weight_decay_ * p->value[j];
        m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
        v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
        p->value[j] -= lr_ * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
      }
    }
  }

 private:
  double lr_, weight_decay_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  int64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

inline double clip_grad_norm(const nn::ParamMap& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : params)
    if (p->has_grad) sq += p->grad.dot(p->grad);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& [name, p] : params)
      if (p->has_grad)
        for (int64_t j = 0; j < p->grad.numel(); ++j) p->grad[j] *= s;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Shared loop machinery
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<size_t> shuffled_indices(size_t n, Rng& rng) {
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  for (size_t i = n; i > 1; --i) {
    const size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

inline Tensor pad_channels(const Tensor& channels, int64_t t_max) {
  if (channels.dim(1) == t_max) return channels;
  Tensor out({channels.dim(0), t_max});
  for (int64_t c = 0; c < channels.dim(0); ++c)
    for (int64_t t = 0; t < channels.dim(1); ++t) out.at(c, t) = channels.at(c, t);
  return out;
}

template <typename SaveSnapshot>
void guard_finite_loss(double loss, int64_t step, const std::string& diagnostic_path,
                       SaveSnapshot&& save) {
  if (std::isfinite(loss)) return;
  std::string note;
  if (!diagnostic_path.empty()) {
    save(diagnostic_path);
    note = str_cat("; diagnostic snapshot written to '", diagnostic_path, "'");
  }
  fail("training aborted: non-finite loss at step ", step, note);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 1: beamformer on SI-SNR
// ---------------------------------------------------------------------------

inline bf::Beamformer train_beamformer(const Dataset& dataset, const TrainConfig& tc,
                                       const bf::BeamformerConfig& mc,
                                       std::ostream* log = nullptr) {
  tc.validate();
  check(!dataset.empty(), "train_beamformer: empty dataset");
  for (const auto& item : dataset) {
    check(item.target.has_value(), "train_beamformer: item '", item.id, "' has no target");
    check(item.mixture.n_channels() == mc.n_channels, "train_beamformer: item '", item.id,
          "' has ", item.mixture.n_channels(), " channels, config expects ", mc.n_channels);
    check(item.target->length() == item.mixture.length(), "train_beamformer: item '", item.id,
          "' target length mismatch");
  }

  Rng root(tc.seed);
  Rng model_rng = root.fork(1);
  Rng shuffle_rng = root.fork(2);
  bf::Beamformer model(mc, model_rng);
  const nn::ParamMap params = model.params();
  Adam opt(tc.learning_rate, tc.weight_decay);

  int64_t step = 0;
  for (int64_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const auto order = detail::shuffled_indices(dataset.size(), shuffle_rng);
    double epoch_loss = 0.0;
    int64_t epoch_batches = 0;
    for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(tc.batch_size)) {
      const size_t end = std::min(order.size(), pos + static_cast<size_t>(tc.batch_size));
      int64_t t_max = 0;
      for (size_t i = pos; i < end; ++i)
        t_max = std::max(t_max, dataset[order[i]].mixture.length());

      nn::zero_grad(params);
      ad::Var total;
      for (size_t i = pos; i < end; ++i) {
        const TrainItem& item = dataset[order[i]];
        const int64_t t_len = item.mixture.length();
        // batch members are zero-padded to the longest; the loss only sees
        // each member's own samples
        ad::Var out = model.forward(ad::constant(detail::pad_channels(item.mixture.channels, t_max)));
        Tensor ref({t_len});
        for (int64_t t = 0; t < t_len; ++t) ref[t] = item.target->samples[static_cast<size_t>(t)];
        ad::Var loss = metrics::si_snr_loss(ad::narrow(out, 0, 0, t_len), ref);
        total = total ? ad::add(total, loss) : loss;
      }
      total = ad::scale(total, 1.0 / static_cast<double>(end - pos));
      const double loss_value = total->value[0];
      detail::guard_finite_loss(loss_value, step, tc.diagnostic_path, [&](const std::string& p) {
        io::save_params(params, "{\"kind\":\"beamformer-diagnostic\"}", p);
      });
      ad::backward(total);
      clip_grad_norm(params, tc.grad_clip);
      opt.step(params);
      ++step;
      epoch_loss += loss_value;
      ++epoch_batches;
      if (log) (*log) << "stage=beamformer epoch=" << epoch << " step=" << step
                      << " loss=" << loss_value << "\n";
    }
    if (log) (*log) << "stage=beamformer epoch=" << epoch
                    << " mean_loss=" << epoch_loss / static_cast<double>(epoch_batches) << "\n";
  }
  return model;
}

// ---------------------------------------------------------------------------
// Stage 2: enhancer on residual-gain MSE
// ---------------------------------------------------------------------------

inline enh::Enhancer train_enhancer(const Dataset& dataset, const TrainConfig& tc,
                                    const enh::EnhancerConfig& ec,
                                    const bf::Beamformer& beamformer,
                                    std::ostream* log = nullptr) {
  tc.validate();
  ec.validate();
  check(!dataset.empty(), "train_enhancer: empty dataset");

  // Frozen stage 1: precompute (log|Z|, R) pairs once.
  struct Pair {
    Tensor logmag;
    Tensor residual;
  };
  std::vector<Pair> pairs;
  pairs.reserve(dataset.size());
  for (const auto& item : dataset) {
    check(item.target.has_value(), "train_enhancer: item '", item.id, "' has no target");
    const dsp::Waveform z_wave = beamformer.beamform(item.mixture);
    const dsp::Spectrogram z =
        dsp::stft(dsp::pad_to_frame_grid(z_wave, ec.window, ec.hop), ec.window, ec.hop, ec.nfft);
    const dsp::Spectrogram x =
        dsp::stft(dsp::pad_to_frame_grid(*item.target, ec.window, ec.hop), ec.window, ec.hop,
                  ec.nfft);
    pairs.push_back({dsp::log_magnitude(z), enh::residual_target(x, z)});
  }

  Rng root(tc.seed);
  Rng model_rng = root.fork(3);
  Rng shuffle_rng = root.fork(4);
  enh::Enhancer model(ec, model_rng);
  const nn::ParamMap params = model.params();
  Adam opt(tc.learning_rate, tc.weight_decay);

  int64_t step = 0;
  for (int64_t epoch = 0; epoch < tc.epochs; ++epoch) {
    const auto order = detail::shuffled_indices(pairs.size(), shuffle_rng);
    double epoch_loss = 0.0;
    int64_t epoch_batches = 0;
    for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(tc.batch_size)) {
      const size_t end = std::min(order.size(), pos + static_cast<size_t>(tc.batch_size));
      nn::zero_grad(params);
      ad::Var total;
      for (size_t i = pos; i < end; ++i) {
        const Pair& pr = pairs[order[i]];
        ad::Var pred = model.predict_residual(ad::constant(pr.logmag));
        ad::Var loss = metrics::mse_loss(pred, pr.residual);
        total = total ? ad::add(total, loss) : loss;
      }
      total = ad::scale(total, 1.0 / static_cast<double>(end - pos));
      const double loss_value = total->value[0];
      detail::guard_finite_loss(loss_value, step, tc.diagnostic_path, [&](const std::string& p) {
        io::save_params(params, "{\"kind\":\"enhancer-diagnostic\"}", p);
      });
      ad::backward(total);
      clip_grad_norm(params, tc.grad_clip);
      opt.step(params);
      ++step;
      epoch_loss += loss_value;
      ++epoch_batches;
      if (log) (*log) << "stage=enhancer epoch=" << epoch << " step=" << step
                      << " loss=" << loss_value << "\n";
    }
    if (log) (*log) << "stage=enhancer epoch=" << epoch
                    << " mean_loss=" << epoch_loss / static_cast<double>(epoch_batches) << "\n";
  }
  return model;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Per-utterance SI-SNR and log-spectral distance before and after each
/// available stage. Items without a reference are skipped with a warning.
inline metrics::MetricReport evaluate(const Dataset& dataset, const bf::Beamformer* beamformer,
                                      const enh::Enhancer* enhancer) {
  metrics::MetricReport report;
  for (const auto& item : dataset) {
    if (!item.target.has_value()) {
      log_warn("evaluate: item '", item.id, "' has no reference, skipping");
      ++report.skipped;
      continue;
    }
    metrics::UtteranceMetrics row;
    row.id = item.id;
    const dsp::Waveform input = item.mixture.channel(item.mixture.reference_channel);
    row.si_snr_in = metrics::si_snr(input, *item.target);
    row.lsd_in = metrics::log_spectral_distance(input, *item.target);

    dsp::Waveform stage = input;
    if (beamformer) {
      stage = beamformer->beamform(item.mixture);
      row.si_snr_bf = metrics::si_snr(stage, *item.target);
      row.lsd_bf = metrics::log_spectral_distance(stage, *item.target);
    }
    if (enhancer) {
      stage = enhancer->enhance(stage);
      row.si_snr_out = metrics::si_snr(stage, *item.target);
      row.lsd_out = metrics::log_spectral_distance(stage, *item.target);
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace beamclean::train
