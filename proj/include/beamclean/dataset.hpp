// Copyright 2026 The beamclean Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "beamclean/trainer.hpp"
#include "beamclean/wav.hpp"

namespace beamclean::io {

using nlohmann::json;

/// Generation recipe for simulated multichannel mixtures.
struct SimulateConfig {
  int n_channels = 8;
  double duration_s = 4.0;
  sim::Vec3 room_min{3.0, 3.0, 3.0};
  sim::Vec3 room_max{8.0, 8.0, 8.0};
  double absorption = 0.5;
  int max_image_order = 2;
  std::string array_kind = "circular";
  double array_radius = 0.05;
  double mic_spacing = 0.04;
  double snr_min_db = 0.0;
  double snr_max_db = 15.0;
  double height_min = 1.0;
  double height_max = 1.5;
  double speed_of_sound = 343.0;
  // 0: a fresh placement per item; nonzero: one fixed installation, as when a
  // physical array stays put while speakers and noise move between recordings
  uint64_t array_seed = 0;

  int64_t n_samples() const { return static_cast<int64_t>(duration_s * kSampleRate); }

  void validate() const {
    check(n_channels >= 2, "SimulateConfig: need at least 2 channels");
    check(duration_s > 0.0, "SimulateConfig: non-positive duration");
    check(room_min.x > 0 && room_min.y > 0 && room_min.z > 0, "SimulateConfig: bad room_min");
    check(room_max.x >= room_min.x && room_max.y >= room_min.y && room_max.z >= room_min.z,
          "SimulateConfig: room_max below room_min");
    check(absorption > 0.0 && absorption <= 1.0, "SimulateConfig: absorption outside (0,1]");
    check(snr_max_db >= snr_min_db, "SimulateConfig: empty SNR range");
    (void)sim::array_kind_from_name(array_kind);
  }
};

/// One simulated (mixture, direct-path target) pair; deterministic per seed.
inline train::TrainItem generate_item(const SimulateConfig& cfg, uint64_t seed,
                                      const std::string& id, json* metadata = nullptr) {
  cfg.validate();
  Rng rng(seed);

  sim::RoomSpec room;
  room.dims = {rng.uniform(cfg.room_min.x, cfg.room_max.x),
               rng.uniform(cfg.room_min.y, cfg.room_max.y),
               rng.uniform(cfg.room_min.z, cfg.room_max.z)};
  room.absorption = cfg.absorption;
  room.max_image_order = cfg.max_image_order;
  room.speed_of_sound = cfg.speed_of_sound;

  sim::ArrayPlacementConfig apc;
  apc.n_mics = cfg.n_channels;
  apc.radius = cfg.array_radius;
  apc.spacing = cfg.mic_spacing;
  apc.height_min = cfg.height_min;
  apc.height_max = std::min(cfg.height_max, room.dims.z - apc.wall_margin);
  const uint64_t placement_seed = cfg.array_seed != 0 ? cfg.array_seed : rng.next_u64();
  if (cfg.array_seed != 0) rng.next_u64();  // keep the stream layout stable
  const sim::ArrayGeometry array =
      sim::place_array(sim::array_kind_from_name(cfg.array_kind), room, placement_seed, apc);

  auto draw_pos = [&](double margin) {
    return sim::Vec3{rng.uniform(margin, room.dims.x - margin),
                     rng.uniform(margin, room.dims.y - margin),
                     rng.uniform(margin, std::min(room.dims.z - margin, 2.0))};
  };
  const sim::Vec3 source_pos = draw_pos(0.3);
  const sim::Vec3 noise_pos = draw_pos(0.3);
  const double snr_db = rng.uniform(cfg.snr_min_db, cfg.snr_max_db);

  Rng speech_rng = rng.fork(11);
  Rng noise_rng = rng.fork(12);
  const dsp::Waveform clean = sim::synth_speech(speech_rng, cfg.n_samples());
  const dsp::Waveform noise = sim::synth_noise(noise_rng, cfg.n_samples());
  const uint64_t mix_seed = rng.next_u64();

  sim::MixtureResult mix = sim::simulate_mixture(clean, noise, room, array, source_pos, noise_pos,
                                                 snr_db, mix_seed, cfg.n_samples());
  if (metadata) {
    json m;
    m["id"] = id;
    m["seed"] = seed;
    m["room_dims"] = {room.dims.x, room.dims.y, room.dims.z};
    m["absorption"] = room.absorption;
    m["max_image_order"] = room.max_image_order;
    m["array_kind"] = sim::array_kind_name(array.kind);
    json mics = json::array();
    for (const auto& p : array.mic_positions) mics.push_back({p.x, p.y, p.z});
    m["mic_positions"] = mics;
    m["source_position"] = {source_pos.x, source_pos.y, source_pos.z};
    m["noise_position"] = {noise_pos.x, noise_pos.y, noise_pos.z};
    m["snr_db"] = snr_db;
    m["n_samples"] = cfg.n_samples();
    *metadata = std::move(m);
  }

  train::TrainItem item;
  item.id = id;
  item.mixture = std::move(mix.mixture);
  item.target = std::move(mix.target);
  return item;
}

// ---------------------------------------------------------------------------
// On-disk layout: <dir>/<id>.mix.wav, <id>.target.wav, <id>.meta.json
// ---------------------------------------------------------------------------

inline void write_dataset_item(const std::string& dir, const train::TrainItem& item,
                               const json& metadata) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::string base = (fs::path(dir) / item.id).string();
  write_wav(item.mixture.channels, base + ".mix.wav", item.mixture.sample_rate);
  if (item.target) write_wav(*item.target, base + ".target.wav");
  std::ofstream meta(base + ".meta.json", std::ios::trunc);
  check(meta.good(), "write_dataset_item: cannot write '", base, ".meta.json'");
  meta << metadata.dump(2) << "\n";
}

inline train::Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  check(fs::is_directory(dir), "load_dataset: '", dir, "' is not a directory");
  std::vector<std::string> bases;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    const std::string suffix = ".mix.wav";
    if (name.size() > suffix.size() && name.ends_with(suffix))
      bases.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(bases.begin(), bases.end());
  check(!bases.empty(), "load_dataset: no *.mix.wav files in '", dir, "'");

  train::Dataset ds;
  for (const auto& base : bases) {
    train::TrainItem item;
    item.id = base;
    item.mixture = read_wav((fs::path(dir) / (base + ".mix.wav")).string());
    const std::string target_path = (fs::path(dir) / (base + ".target.wav")).string();
    if (fs::exists(target_path)) item.target = read_wav_mono(target_path);
    ds.push_back(std::move(item));
  }
  return ds;
}

}  // namespace beamclean::io
