// Copyright 2026 The beamclean Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// End-to-end exercises of the installed CLI binary (path injected by CMake).

#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "beamclean/wav.hpp"

using namespace beamclean;
namespace fs = std::filesystem;

namespace {

const char* kCli = BEAMCLEAN_CLI_PATH;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("beamclean_cli_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(reinterpret_cast<uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

int run(const std::string& args) {
  const std::string cmd = std::string(kCli) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_tiny_config(const std::string& path) {
  std::ofstream f(path);
  f << R"({
    "simulate": {"n_channels": 2, "duration_s": 0.5, "room_min": [3,3,3], "room_max": [5,4,3],
                 "max_image_order": 1},
    "beamformer": {"n_channels": 2, "feature_dim": 8, "compress_hidden": 8, "n_dprnn_blocks": 1,
                   "chunk_len": 8, "dprnn_hidden": 16, "attn_heads": 1, "attn_embed": 8,
                   "decompress_hidden": 16},
    "enhancer": {"conv_filters": [4, 4], "conv_kernels": [[3, 5], [3, 5]], "pool_groups": 4,
                 "lstm1_hidden": 16},
    "train": {"learning_rate": 0.001, "batch_size": 2, "epochs": 1, "seed": 5}
  })";
}

}  // namespace

TEST_CASE("cli pipeline: simulate, train, enhance, evaluate, info") {
  TempDir tmp;
  const std::string cfg = tmp.file("cfg.json");
  write_tiny_config(cfg);

  // simulate twice with the same seed: byte-identical artifacts
  REQUIRE(run("simulate --config " + cfg + " --out " + tmp.file("data") + " --count 3 --seed 9") == 0);
  REQUIRE(run("simulate --config " + cfg + " --out " + tmp.file("data2") + " --count 3 --seed 9") == 0);
  for (const auto& name : {"item_00000.mix.wav", "item_00001.target.wav", "item_00002.meta.json"}) {
    CHECK(slurp((fs::path(tmp.file("data")) / name).string()) ==
          slurp((fs::path(tmp.file("data2")) / name).string()));
  }

  // train both stages (1 epoch, tiny model)
  REQUIRE(run("train-beamformer --config " + cfg + " --data " + tmp.file("data") + " --out " +
              tmp.file("bf.ckpt")) == 0);
  REQUIRE(fs::exists(tmp.file("bf.ckpt")));
  REQUIRE(run("train-enhancer --config " + cfg + " --data " + tmp.file("data") +
              " --beamformer " + tmp.file("bf.ckpt") + " --out " + tmp.file("en.ckpt")) == 0);
  REQUIRE(fs::exists(tmp.file("en.ckpt")));

  // info prints without error
  CHECK(run("info " + tmp.file("bf.ckpt")) == 0);
  CHECK(run("info " + tmp.file("en.ckpt")) == 0);

  // enhance: output duration equals input duration; repeat runs byte-identical
  const std::string mix = (fs::path(tmp.file("data")) / "item_00000.mix.wav").string();
  REQUIRE(run("enhance " + mix + " " + tmp.file("out1.wav") + " --beamformer " +
              tmp.file("bf.ckpt") + " --enhancer " + tmp.file("en.ckpt")) == 0);
  REQUIRE(run("enhance " + mix + " " + tmp.file("out2.wav") + " --beamformer " +
              tmp.file("bf.ckpt") + " --enhancer " + tmp.file("en.ckpt")) == 0);
  CHECK(slurp(tmp.file("out1.wav")) == slurp(tmp.file("out2.wav")));
  auto in_wav = io::read_wav(mix);
  auto out_wav = io::read_wav(tmp.file("out1.wav"));
  CHECK(out_wav.channels.dim(1) == in_wav.channels.dim(1));

  // beamformer-only path
  REQUIRE(run("enhance " + mix + " " + tmp.file("out3.wav") + " --beamformer " +
              tmp.file("bf.ckpt") + " --skip-enhancer") == 0);
  CHECK(io::read_wav(tmp.file("out3.wav")).channels.dim(1) == in_wav.channels.dim(1));

  // evaluate writes a report
  REQUIRE(run("evaluate --data " + tmp.file("data") + " --beamformer " + tmp.file("bf.ckpt") +
              " --enhancer " + tmp.file("en.ckpt") + " --report " + tmp.file("report.txt")) == 0);
  const std::string report = slurp(tmp.file("report.txt"));
  CHECK(report.find("si_snr_in") != std::string::npos);
  CHECK(report.find("si_snr_out") != std::string::npos);
  CHECK(report.find("aggregates") != std::string::npos);
}

TEST_CASE("cli exit codes: 1 for usage errors, 2 for runtime errors") {
  TempDir tmp;
  CHECK(run("no-such-command") == 1);
  CHECK(run("enhance") == 1);  // missing required args
  // enhance without --enhancer and without --skip-enhancer is a usage error
  io::write_wav(Tensor({2, 1000}), tmp.file("x.wav"));
  CHECK(run("enhance " + tmp.file("x.wav") + " " + tmp.file("y.wav") + " --beamformer " +
            tmp.file("missing.ckpt")) == 1);
  // missing checkpoint file is a runtime error
  CHECK(run("enhance " + tmp.file("x.wav") + " " + tmp.file("y.wav") + " --beamformer " +
            tmp.file("missing.ckpt") + " --skip-enhancer") == 2);
  // unknown config key is a runtime error surfaced cleanly
  const std::string bad = tmp.file("bad.json");
  {
    std::ofstream f(bad);
    f << R"({"train": {"lr": 1}})";
  }
  CHECK(run("simulate --config " + bad + " --out " + tmp.file("d") + " --count 1") == 2);
}
