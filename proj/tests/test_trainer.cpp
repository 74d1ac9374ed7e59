// Copyright 2026 The beamclean Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <sstream>
#include <unistd.h>

#include "beamclean/dataset.hpp"
#include "beamclean/trainer.hpp"
#include "testutil.hpp"

using namespace beamclean;
using Catch::Approx;

namespace {

bf::BeamformerConfig tiny_bf_config() {
  bf::BeamformerConfig c;
  c.n_channels = 2;
  c.feature_dim = 8;
  c.compress_hidden = 8;
  c.n_dprnn_blocks = 1;
  c.chunk_len = 8;
  c.dprnn_hidden = 16;
  c.attn_heads = 1;
  c.attn_embed = 8;
  c.decompress_hidden = 16;
  return c;
}

train::Dataset tiny_dataset(int count, int64_t t, uint64_t seed) {
  io::SimulateConfig scfg;
  scfg.n_channels = 2;
  scfg.duration_s = static_cast<double>(t) / kSampleRate;
  scfg.room_min = {3.0, 3.0, 3.0};
  scfg.room_max = {5.0, 4.0, 3.0};
  scfg.max_image_order = 1;
  train::Dataset ds;
  Rng rng(seed);
  for (int i = 0; i < count; ++i)
    ds.push_back(io::generate_item(scfg, rng.next_u64(), "it" + std::to_string(i)));
  return ds;
}

bool params_equal(const nn::ParamMap& a, const nn::ParamMap& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first) return false;
    if (!a[i].second->value.same_shape(b[i].second->value)) return false;
    for (int64_t j = 0; j < a[i].second->value.numel(); ++j)
      if (a[i].second->value[j] != b[i].second->value[j]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("epochs=0 returns the initialization") {
  auto ds = tiny_dataset(2, 4000, 1);
  train::TrainConfig tc;
  tc.epochs = 0;
  tc.seed = 42;
  auto model = train::train_beamformer(ds, tc, tiny_bf_config());

  // the trainer derives the model stream as fork(1) of the master seed
  Rng root(42);
  Rng model_rng = root.fork(1);
  bf::Beamformer fresh(tiny_bf_config(), model_rng);
  CHECK(params_equal(model.params(), fresh.params()));
}

TEST_CASE("identical seeds give identical loss trajectories and parameters") {
  auto ds = tiny_dataset(3, 4000, 2);
  train::TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 2;
  tc.learning_rate = 1e-3;
  tc.seed = 7;
  std::ostringstream log_a, log_b;
  auto ma = train::train_beamformer(ds, tc, tiny_bf_config(), &log_a);
  auto mb = train::train_beamformer(ds, tc, tiny_bf_config(), &log_b);
  CHECK(log_a.str() == log_b.str());
  CHECK(params_equal(ma.params(), mb.params()));
  CHECK(log_a.str().find("stage=beamformer epoch=0 step=1 loss=") != std::string::npos);
  CHECK(log_a.str().find("mean_loss=") != std::string::npos);
}

TEST_CASE("per-step losses stay finite on the desk config") {
  auto ds = tiny_dataset(4, 4000, 3);
  train::TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 2;
  tc.learning_rate = 1e-3;
  tc.seed = 11;
  std::ostringstream log;
  auto model = train::train_beamformer(ds, tc, tiny_bf_config(), &log);
  std::istringstream lines(log.str());
  std::string line;
  int steps = 0;
  while (std::getline(lines, line)) {
    const auto pos = line.find("loss=");
    if (pos == std::string::npos) continue;
    const double v = std::stod(line.substr(pos + 5));
    CHECK(std::isfinite(v));
    ++steps;
  }
  CHECK(steps >= 6);
}

TEST_CASE("zero padding never changes the loss of unpadded batch members") {
  auto ds = tiny_dataset(1, 4000, 4);
  Rng rng(5);
  bf::Beamformer model(tiny_bf_config(), rng);
  const auto& item = ds[0];

  // the longest member of any batch sees no padding: its masked loss equals
  // the loss computed on its own
  Tensor ref({item.mixture.length()});
  for (int64_t i = 0; i < item.mixture.length(); ++i)
    ref[i] = item.target->samples[static_cast<size_t>(i)];
  ad::NoGradGuard ng;
  ad::Var alone = metrics::si_snr_loss(model.forward(ad::constant(item.mixture.channels)), ref);
  // same computation via the batch path (pad to its own length = no-op)
  ad::Var batched = metrics::si_snr_loss(
      ad::narrow(model.forward(ad::constant(item.mixture.channels)), 0, 0, item.mixture.length()),
      ref);
  CHECK(alone->value[0] == batched->value[0]);
}

TEST_CASE("NaN loss aborts with a diagnostic snapshot") {
  namespace fs = std::filesystem;
  auto ds = tiny_dataset(1, 4000, 6);
  // poison the mixture so the loss overflows deterministically
  ds[0].mixture.channels.fill(1e308);
  train::TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 1;
  tc.seed = 3;
  const std::string diag = (fs::temp_directory_path() /
                            ("bc_diag_" + std::to_string(::getpid()) + ".ckpt")).string();
  tc.diagnostic_path = diag;
  CHECK_THROWS_WITH(train::train_beamformer(ds, tc, tiny_bf_config()),
                    Catch::Matchers::ContainsSubstring("non-finite loss"));
  CHECK(fs::exists(diag));
  fs::remove(diag);
}

TEST_CASE("training rejects empty and target-less datasets") {
  train::TrainConfig tc;
  CHECK_THROWS_AS(train::train_beamformer({}, tc, tiny_bf_config()), Error);
  auto ds = tiny_dataset(1, 4000, 7);
  ds[0].target.reset();
  CHECK_THROWS_WITH(train::train_beamformer(ds, tc, tiny_bf_config()),
                    Catch::Matchers::ContainsSubstring("no target"));
}

TEST_CASE("a few steps of training reduce the beamformer loss") {
  auto ds = tiny_dataset(1, 4000, 8);
  train::TrainConfig tc;
  tc.epochs = 30;
  tc.batch_size = 1;
  tc.learning_rate = 2e-3;
  tc.seed = 13;
  std::ostringstream log;
  auto model = train::train_beamformer(ds, tc, tiny_bf_config(), &log);
  // compare first and last logged losses
  std::vector<double> losses;
  std::istringstream lines(log.str());
  std::string line;
  while (std::getline(lines, line)) {
    const auto pos = line.find(" loss=");
    if (pos != std::string::npos) losses.push_back(std::stod(line.substr(pos + 6)));
  }
  REQUIRE(losses.size() >= 10);
  CHECK(losses.back() < losses.front());
}

TEST_CASE("enhancer training runs and epochs=0 returns the init") {
  auto ds = tiny_dataset(1, 4000, 9);
  train::TrainConfig tc;
  tc.epochs = 0;
  tc.seed = 21;
  Rng rng(1);
  bf::Beamformer bf_model(tiny_bf_config(), rng);
  enh::EnhancerConfig ec = enh::EnhancerConfig::desk();
  auto model = train::train_enhancer(ds, tc, ec, bf_model);

  Rng root(21);
  root.fork(3);  // model stream id must match the trainer's derivation
  Rng model_rng = Rng(21).fork(3);
  enh::Enhancer fresh(ec, model_rng);
  CHECK(params_equal(model.params(), fresh.params()));

  // a degenerate R == 0 dataset is learnable by a zero-output network:
  // targets equal the beamformed signal itself
  train::Dataset degenerate = ds;
  degenerate[0].target = bf_model.beamform(ds[0].mixture);
  train::TrainConfig tc2;
  tc2.epochs = 1;
  tc2.batch_size = 1;
  tc2.seed = 22;
  std::ostringstream log;
  train::train_enhancer(degenerate, tc2, ec, bf_model, &log);
  CHECK(log.str().find("stage=enhancer") != std::string::npos);
}

TEST_CASE("evaluate on identity pseudo-pairs reports the +60 dB clamp") {
  Rng rng(30);
  train::Dataset ds;
  for (int i = 0; i < 3; ++i) {
    train::TrainItem item;
    item.id = "pseudo" + std::to_string(i);
    auto wave = testutil::random_wave(rng, 4000);
    item.mixture.channels = Tensor({1, 4000});
    for (int64_t t = 0; t < 4000; ++t) item.mixture.channels.at(0, t) = wave.samples[static_cast<size_t>(t)];
    item.target = wave;
    ds.push_back(std::move(item));
  }
  auto report = train::evaluate(ds, nullptr, nullptr);
  REQUIRE(report.rows.size() == 3);
  for (const auto& row : report.rows) {
    CHECK(row.si_snr_in == 60.0);
    CHECK(row.final_si_snr() == 60.0);
    CHECK_FALSE(row.si_snr_out.has_value());  // no stage-2 columns without an enhancer
    CHECK_FALSE(row.si_snr_bf.has_value());
  }
  const std::string text = report.to_text();
  CHECK(text.find("si_snr_out") == std::string::npos);
}

TEST_CASE("evaluate skips items without a reference") {
  auto ds = tiny_dataset(2, 4000, 31);
  ds[1].target.reset();
  Rng rng(32);
  bf::Beamformer model(tiny_bf_config(), rng);
  auto report = train::evaluate(ds, &model, nullptr);
  CHECK(report.rows.size() == 1);
  CHECK(report.skipped == 1);
  CHECK(report.rows[0].si_snr_bf.has_value());
  CHECK_FALSE(report.rows[0].si_snr_out.has_value());
}
