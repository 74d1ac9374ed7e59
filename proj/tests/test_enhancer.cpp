// Copyright 2026 The beamclean Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>

#include "beamclean/enhancer.hpp"
#include "beamclean/losses.hpp"
#include "testutil.hpp"

using namespace beamclean;
using Catch::Approx;

namespace {

// tiny CLSTM (K = 17 bins) for gradient work
enh::EnhancerConfig tiny_config() {
  enh::EnhancerConfig c;
  c.window = 32;
  c.hop = 16;
  c.nfft = 32;
  c.conv_filters = {4, 4};
  c.conv_kernels = {{3, 5}, {3, 5}};
  c.pool_groups = 4;
  c.lstm1_hidden = 6;
  return c;
}

void zero_params(const nn::ParamMap& pm) {
  for (const auto& [name, p] : pm) p->value.fill(0.0);
}

}  // namespace

TEST_CASE("full-size parameter count is 3.76M within 15%") {
  Rng rng(1);
  enh::Enhancer model(enh::EnhancerConfig{}, rng);
  const double count = static_cast<double>(model.parameter_count());
  CHECK(std::fabs(count - 3.76e6) <= 0.15 * 3.76e6);
}

TEST_CASE("residual_target examples") {
  Rng rng(2);
  auto spec = dsp::stft(testutil::random_wave(rng, 2000));

  // identical inputs give a zero residual
  auto zero = enh::residual_target(spec, spec);
  CHECK(zero.abs_max() == 0.0);

  // |X| = e^2, |Z| = e at one bin -> R = 1
  auto x = spec;
  auto z = spec;
  x.frames[5] = {std::exp(2.0), 0.0};
  z.frames[5] = {std::exp(1.0), 0.0};
  CHECK(enh::residual_target(x, z)[5] == Approx(1.0).margin(1e-12));

  // random pair: log|Z| + R reconstructs log|X| in double precision
  auto a = dsp::stft(testutil::random_wave(rng, 2000));
  auto b = dsp::stft(testutil::random_wave(rng, 2000));
  auto r = enh::residual_target(a, b);
  auto la = dsp::log_magnitude(a);
  auto lb = dsp::log_magnitude(b);
  for (int64_t i = 0; i < r.numel(); ++i)
    CHECK(lb[i] + r[i] == Approx(la[i]).margin(1e-12));

  auto short_spec = dsp::stft(testutil::random_wave(rng, 1000));
  CHECK_THROWS_AS(enh::residual_target(a, short_spec), Error);
}

TEST_CASE("apply_residual examples") {
  Rng rng(3);
  auto z = dsp::stft(testutil::random_wave(rng, 2000));

  // zero gain is the identity
  Tensor zeros({z.n_frames, z.n_bins});
  auto same = enh::apply_residual(z, zeros);
  for (size_t i = 0; i < z.frames.size(); ++i)
    CHECK(std::abs(same.frames[i] - z.frames[i]) < 1e-12);

  // unit gain multiplies magnitudes by e and keeps phases
  Tensor ones = Tensor::full({z.n_frames, z.n_bins}, 1.0);
  auto scaled = enh::apply_residual(z, ones);
  for (int64_t n = 0; n < z.n_frames; ++n)
    for (int64_t k = 0; k < z.n_bins; ++k) {
      const auto zv = z.at(n, k);
      const auto sv = scaled.at(n, k);
      const double mag = std::max(std::abs(zv), dsp::kMagnitudeFloor);
      CHECK(std::abs(sv) == Approx(mag * std::exp(1.0)).epsilon(1e-12));
      if (std::abs(zv) > 1e-12) CHECK(std::arg(sv) == Approx(std::arg(zv)).margin(1e-12));
    }

  // Eq.(1) round trip: apply_residual(Z, residual_target(X, Z)) has |X| above the floor
  auto x = dsp::stft(testutil::random_wave(rng, 2000));
  auto rebuilt = enh::apply_residual(z, enh::residual_target(x, z));
  for (int64_t n = 0; n < x.n_frames; ++n)
    for (int64_t k = 0; k < x.n_bins; ++k) {
      const double mx = std::abs(x.at(n, k));
      if (mx > dsp::kMagnitudeFloor)
        CHECK(std::abs(rebuilt.at(n, k)) == Approx(mx).margin(1e-10));
    }

  Tensor bad({2, 2});
  CHECK_THROWS_AS(enh::apply_residual(z, bad), Error);
}

TEST_CASE("predict_residual preserves the published full-scale shape") {
  Rng rng(4);
  enh::Enhancer model(enh::EnhancerConfig{}, rng);
  Tensor logmag = Tensor::normal({399, 257}, rng, 1.0);
  for (int64_t i = 0; i < logmag.numel(); ++i) logmag[i] -= 5.0;
  const Tensor out = model.predict(logmag);
  CHECK(out.shape() == Shape{399, 257});
  CHECK(out.all_finite());
}

TEST_CASE("predict_residual preserves shape for arbitrary frame counts") {
  Rng rng(5);
  enh::Enhancer model(enh::EnhancerConfig::desk(), rng);
  for (int64_t n : {5, 9, 20}) {
    Tensor logmag = Tensor::normal({n, 257}, rng);
    CHECK(model.predict(logmag).shape() == Shape{n, 257});
  }
}

TEST_CASE("zero input with zero parameters gives zero output") {
  Rng rng(6);
  enh::Enhancer model(tiny_config(), rng);
  zero_params(model.params());
  const Tensor out = model.predict(Tensor({8, 17}));
  CHECK(out.abs_max() == 0.0);
}

TEST_CASE("desk predictions are reproducible for a fixed seed") {
  Rng rng_a(77);
  Rng rng_b(77);
  enh::Enhancer a(enh::EnhancerConfig::desk(), rng_a);
  enh::Enhancer b(enh::EnhancerConfig::desk(), rng_b);
  Rng drng(5);
  Tensor logmag = Tensor::normal({20, 257}, drng);
  const Tensor ya = a.predict(logmag);
  const Tensor yb = b.predict(logmag);
  for (int64_t i = 0; i < ya.numel(); ++i) CHECK(ya[i] == yb[i]);
  CHECK(ya.all_finite());
}

TEST_CASE("predict_residual rejects non-finite input") {
  Rng rng(7);
  enh::Enhancer model(tiny_config(), rng);
  Tensor bad({8, 17});
  bad[3] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(model.predict(bad), Error);
}

TEST_CASE("zero-parameter enhance equals istft(stft(x))") {
  Rng rng(8);
  enh::Enhancer model(enh::EnhancerConfig::desk(), rng);
  zero_params(model.params());
  auto x = testutil::random_wave(rng, 16000);
  auto y = model.enhance(x);
  REQUIRE(y.length() == x.length());

  const auto padded = dsp::pad_to_frame_grid(x, 320, 160);
  auto ref = dsp::istft(dsp::stft(padded));
  ref.samples.resize(x.samples.size());
  for (int64_t i = 0; i < y.length(); ++i)
    CHECK(y.samples[static_cast<size_t>(i)] == Approx(ref.samples[static_cast<size_t>(i)]).margin(1e-9));
  // near-identity away from the window edges
  for (int64_t i = 320; i < y.length() - 320; ++i)
    CHECK(y.samples[static_cast<size_t>(i)] == Approx(x.samples[static_cast<size_t>(i)]).margin(1e-6));
}

TEST_CASE("enhance preserves length for full-scale input") {
  Rng rng(9);
  enh::Enhancer model(enh::EnhancerConfig::desk(), rng);
  auto x = testutil::random_wave(rng, 64000);
  auto y = model.enhance(x);
  CHECK(y.length() == 64000);
  // non-grid length as well
  auto x2 = testutil::random_wave(rng, 5003);
  CHECK(model.enhance(x2).length() == 5003);
}

TEST_CASE("CLSTM gradients match finite differences (tiny config)") {
  Rng rng(10);
  enh::Enhancer model(tiny_config(), rng);
  Tensor logmag = Tensor::normal({8, 17}, rng);
  Tensor target = Tensor::normal({8, 17}, rng, 0.3);
  auto make = [&]() {
    return metrics::mse_loss(model.predict_residual(ad::constant(logmag)), target);
  };
  auto res = testutil::gradcheck_groups(make, model.params(), 1e-5);
  INFO("worst group: " << res.worst_group << " rel err " << res.max_rel_err);
  CHECK(res.max_rel_err <= 1e-4);
}
