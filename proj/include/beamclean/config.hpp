// Copyright 2026 The beamclean Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <fstream>
#include <initializer_list>
#include <string>

#include <json.hpp>

#include "beamclean/dataset.hpp"

namespace beamclean::io {

using nlohmann::json;

namespace detail {

inline void expect_keys(const json& j, const std::string& section,
                        std::initializer_list<const char*> keys) {
  check(j.is_object(), "config: section '", section, "' must be an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* kk : keys)
      if (k == kk) known = true;
    check(known, "config: unknown key '", section.empty() ? k : section + "." + k, "'");
  }
}

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void read_vec3(const json& j, const char* key, sim::Vec3& out) {
  if (!j.contains(key)) return;
  const auto& a = j.at(key);
  check(a.is_array() && a.size() == 3, "config: '", key, "' must be a 3-element array");
  out = {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Section serde
// ---------------------------------------------------------------------------

inline json to_json(const bf::BeamformerConfig& c) {
  return json{{"n_channels", c.n_channels},
              {"encoder_kernel", c.encoder_kernel},
              {"encoder_stride", c.encoder_stride},
              {"encoder_pad", c.encoder_pad},
              {"feature_dim", c.feature_dim},
              {"context_per_side", c.context_per_side},
              {"compress_hidden", c.compress_hidden},
              {"n_dprnn_blocks", c.n_dprnn_blocks},
              {"chunk_len", c.chunk_len},
              {"dprnn_hidden", c.dprnn_hidden},
              {"attn_heads", c.attn_heads},
              {"attn_embed", c.attn_embed},
              {"scale_attn_scores", c.scale_attn_scores},
              {"decompress_hidden", c.decompress_hidden},
              {"reference_channel", c.reference_channel}};
}

inline bf::BeamformerConfig beamformer_config_from_json(const json& j,
                                                        const std::string& section) {
  detail::expect_keys(j, section,
                      {"n_channels", "encoder_kernel", "encoder_stride", "encoder_pad",
                       "feature_dim", "context_per_side", "compress_hidden", "n_dprnn_blocks",
                       "chunk_len", "dprnn_hidden", "attn_heads", "attn_embed",
                       "scale_attn_scores", "decompress_hidden", "reference_channel"});
  bf::BeamformerConfig c;
  detail::read_key(j, "n_channels", c.n_channels);
  detail::read_key(j, "encoder_kernel", c.encoder_kernel);
  detail::read_key(j, "encoder_stride", c.encoder_stride);
  detail::read_key(j, "encoder_pad", c.encoder_pad);
  detail::read_key(j, "feature_dim", c.feature_dim);
  detail::read_key(j, "context_per_side", c.context_per_side);
  detail::read_key(j, "compress_hidden", c.compress_hidden);
  detail::read_key(j, "n_dprnn_blocks", c.n_dprnn_blocks);
  detail::read_key(j, "chunk_len", c.chunk_len);
  detail::read_key(j, "dprnn_hidden", c.dprnn_hidden);
  detail::read_key(j, "attn_heads", c.attn_heads);
  detail::read_key(j, "attn_embed", c.attn_embed);
  detail::read_key(j, "scale_attn_scores", c.scale_attn_scores);
  detail::read_key(j, "decompress_hidden", c.decompress_hidden);
  detail::read_key(j, "reference_channel", c.reference_channel);
  c.validate();
  return c;
}

inline json to_json(const enh::EnhancerConfig& c) {
  json kernels = json::array();
  for (const auto& [kh, kw] : c.conv_kernels) kernels.push_back({kh, kw});
  return json{{"window", c.window},         {"hop", c.hop},
              {"nfft", c.nfft},             {"conv_filters", c.conv_filters},
              {"conv_kernels", kernels},    {"pool_groups", c.pool_groups},
              {"lstm1_hidden", c.lstm1_hidden}};
}

inline enh::EnhancerConfig enhancer_config_from_json(const json& j, const std::string& section) {
  detail::expect_keys(j, section,
                      {"window", "hop", "nfft", "conv_filters", "conv_kernels", "pool_groups",
                       "lstm1_hidden"});
  enh::EnhancerConfig c;
  detail::read_key(j, "window", c.window);
  detail::read_key(j, "hop", c.hop);
  detail::read_key(j, "nfft", c.nfft);
  detail::read_key(j, "conv_filters", c.conv_filters);
  if (j.contains("conv_kernels")) {
    c.conv_kernels.clear();
    for (const auto& k : j.at("conv_kernels")) {
      check(k.is_array() && k.size() == 2, "config: conv_kernels entries must be [kh, kw]");
      c.conv_kernels.emplace_back(k[0].get<int64_t>(), k[1].get<int64_t>());
    }
  }
  detail::read_key(j, "pool_groups", c.pool_groups);
  detail::read_key(j, "lstm1_hidden", c.lstm1_hidden);
  c.validate();
  return c;
}

inline json to_json(const train::TrainConfig& c) {
  return json{{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay},
              {"batch_size", c.batch_size},       {"epochs", c.epochs},
              {"seed", c.seed},                   {"grad_clip", c.grad_clip}};
}

inline train::TrainConfig train_config_from_json(const json& j, const std::string& section) {
  detail::expect_keys(j, section,
                      {"learning_rate", "weight_decay", "batch_size", "epochs", "seed",
                       "grad_clip"});
  train::TrainConfig c;
  detail::read_key(j, "learning_rate", c.learning_rate);
  detail::read_key(j, "weight_decay", c.weight_decay);
  detail::read_key(j, "batch_size", c.batch_size);
  detail::read_key(j, "epochs", c.epochs);
  detail::read_key(j, "seed", c.seed);
  detail::read_key(j, "grad_clip", c.grad_clip);
  c.validate();
  return c;
}

inline json to_json(const SimulateConfig& c) {
  return json{{"n_channels", c.n_channels},
              {"duration_s", c.duration_s},
              {"room_min", {c.room_min.x, c.room_min.y, c.room_min.z}},
              {"room_max", {c.room_max.x, c.room_max.y, c.room_max.z}},
              {"absorption", c.absorption},
              {"max_image_order", c.max_image_order},
              {"array_kind", c.array_kind},
              {"array_radius", c.array_radius},
              {"mic_spacing", c.mic_spacing},
              {"snr_min_db", c.snr_min_db},
              {"snr_max_db", c.snr_max_db},
              {"height_min", c.height_min},
              {"height_max", c.height_max},
              {"speed_of_sound", c.speed_of_sound},
              {"array_seed", c.array_seed}};
}

inline SimulateConfig simulate_config_from_json(const json& j, const std::string& section) {
  detail::expect_keys(j, section,
                      {"n_channels", "duration_s", "room_min", "room_max", "absorption",
                       "max_image_order", "array_kind", "array_radius", "mic_spacing",
                       "snr_min_db", "snr_max_db", "height_min", "height_max",
                       "speed_of_sound", "array_seed"});
  SimulateConfig c;
  detail::read_key(j, "n_channels", c.n_channels);
  detail::read_key(j, "duration_s", c.duration_s);
  detail::read_vec3(j, "room_min", c.room_min);
  detail::read_vec3(j, "room_max", c.room_max);
  detail::read_key(j, "absorption", c.absorption);
  detail::read_key(j, "max_image_order", c.max_image_order);
  detail::read_key(j, "array_kind", c.array_kind);
  detail::read_key(j, "array_radius", c.array_radius);
  detail::read_key(j, "mic_spacing", c.mic_spacing);
  detail::read_key(j, "snr_min_db", c.snr_min_db);
  detail::read_key(j, "snr_max_db", c.snr_max_db);
  detail::read_key(j, "height_min", c.height_min);
  detail::read_key(j, "height_max", c.height_max);
  detail::read_key(j, "speed_of_sound", c.speed_of_sound);
  detail::read_key(j, "array_seed", c.array_seed);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Pipeline config (nested sections, unknown keys rejected everywhere)
// ---------------------------------------------------------------------------

struct PipelineConfig {
  SimulateConfig simulate;
  bf::BeamformerConfig beamformer;
  enh::EnhancerConfig enhancer;
  train::TrainConfig train;
};

inline PipelineConfig pipeline_config_from_json(const json& j) {
  detail::expect_keys(j, "", {"simulate", "beamformer", "enhancer", "train", "evaluate"});
  PipelineConfig c;
  if (j.contains("simulate")) c.simulate = simulate_config_from_json(j.at("simulate"), "simulate");
  if (j.contains("beamformer"))
    c.beamformer = beamformer_config_from_json(j.at("beamformer"), "beamformer");
  if (j.contains("enhancer")) c.enhancer = enhancer_config_from_json(j.at("enhancer"), "enhancer");
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"), "train");
  if (j.contains("evaluate")) detail::expect_keys(j.at("evaluate"), "evaluate", {});
  return c;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "config: cannot open '", path, "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail("config '", path, "': ", e.what());
  }
  return pipeline_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Model <-> checkpoint glue
// ---------------------------------------------------------------------------

inline std::string beamformer_checkpoint_config(const bf::BeamformerConfig& c) {
  return json{{"kind", "beamformer"}, {"config", to_json(c)}}.dump();
}

inline std::string enhancer_checkpoint_config(const enh::EnhancerConfig& c) {
  return json{{"kind", "enhancer"}, {"config", to_json(c)}}.dump();
}

inline std::string checkpoint_kind(const Checkpoint& ckpt) {
  json j;
  try {
    j = json::parse(ckpt.config_json);
  } catch (const json::exception& e) {
    fail("checkpoint: unparsable config block: ", e.what());
  }
  check(j.contains("kind"), "checkpoint: config block has no 'kind'");
  return j.at("kind").get<std::string>();
}

inline bf::Beamformer beamformer_from_checkpoint(const Checkpoint& ckpt) {
  check(checkpoint_kind(ckpt) == "beamformer", "checkpoint: kind '", checkpoint_kind(ckpt),
        "', expected 'beamformer'");
  const json j = json::parse(ckpt.config_json);
  const bf::BeamformerConfig cfg =
      beamformer_config_from_json(j.at("config"), "checkpoint.config");
  Rng rng(0);
  bf::Beamformer model(cfg, rng);
  load_into_params(ckpt, model.params());
  return model;
}

inline enh::Enhancer enhancer_from_checkpoint(const Checkpoint& ckpt) {
  check(checkpoint_kind(ckpt) == "enhancer", "checkpoint: kind '", checkpoint_kind(ckpt),
        "', expected 'enhancer'");
  const json j = json::parse(ckpt.config_json);
  const enh::EnhancerConfig cfg = enhancer_config_from_json(j.at("config"), "checkpoint.config");
  Rng rng(0);
  enh::Enhancer model(cfg, rng);
  load_into_params(ckpt, model.params());
  return model;
}

inline void save_beamformer(const bf::Beamformer& model, const std::string& path) {
  save_params(model.params(), beamformer_checkpoint_config(model.cfg), path);
}

inline void save_enhancer(const enh::Enhancer& model, const std::string& path) {
  save_params(model.params(), enhancer_checkpoint_config(model.cfg), path);
}

}  // namespace beamclean::io
