// Copyright 2026 The beamclean Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "beamclean/nn.hpp"

namespace beamclean::io {

// Flat named-tensor archive:
//   magic "BCNT" | u32 version | u64 config_len | config JSON |
//   u64 tensor_count | per tensor: u64 name_len, name, u8 dtype(0=f32),
//   u8 ndim, i64 dims..., f32 LE payload | u32 CRC32 of everything above.
// Tensors are stored row-major as float32; loading restores exact float32
// values, so save -> load -> save is byte-identical.

constexpr uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[5] = "BCNT";

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::string config_json;
  std::vector<NamedTensor> tensors;

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& t : tensors) n += shape_numel(t.shape);
    return n;
  }
};

namespace detail {

inline uint32_t crc32(const std::string& data) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  uint32_t c = 0xFFFFFFFFu;
  for (unsigned char ch : data) c = table[(c ^ ch) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_i64(std::string& out, int64_t v) { put_u64(out, static_cast<uint64_t>(v)); }
inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<uint32_t>(v)); }

struct Reader {
  const std::string& d;
  size_t off = 0;
  const std::string& path;

  void need(size_t n, const char* what) {
    check(off + n <= d.size(), "checkpoint '", path, "': truncated while reading ", what);
  }
  uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<uint8_t>(d[off++]);
  }
  uint32_t u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(d[off + i])) << (8 * i);
    off += 4;
    return v;
  }
  uint64_t u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(d[off + i])) << (8 * i);
    off += 8;
    return v;
  }
  std::string bytes(size_t n, const char* what) {
    need(n, what);
    std::string s = d.substr(off, n);
    off += n;
    return s;
  }
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, ckpt.config_json.size());
  out += ckpt.config_json;
  detail::put_u64(out, ckpt.tensors.size());
  for (const auto& t : ckpt.tensors) {
    check(static_cast<int64_t>(t.data.size()) == shape_numel(t.shape), "encode_checkpoint: '",
          t.name, "' byte length does not match shape ", shape_str(t.shape));
    detail::put_u64(out, t.name.size());
    out += t.name;
    out.push_back(0);  // dtype float32
    out.push_back(static_cast<char>(t.shape.size()));
    for (int64_t d : t.shape) detail::put_i64(out, d);
    for (float v : t.data) detail::put_f32(out, v);
  }
  detail::put_u32(out, detail::crc32(out));
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& data, const std::string& path) {
  check(data.size() >= 12, "checkpoint '", path, "': too short");
  const uint32_t stored_crc = [&] {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<uint8_t>(data[data.size() - 4 + i])) << (8 * i);
    return v;
  }();
  const std::string body = data.substr(0, data.size() - 4);
  check(detail::crc32(body) == stored_crc, "checkpoint '", path,
        "': checksum mismatch (file corrupt)");

  detail::Reader r{body, 0, path};
  check(r.bytes(4, "magic") == std::string(kCheckpointMagic, 4), "checkpoint '", path,
        "': bad magic");
  const uint32_t version = r.u32("version");
  check(version == kCheckpointVersion, "checkpoint '", path, "': version ", version,
        " unsupported (expected ", kCheckpointVersion, ")");

  Checkpoint ckpt;
  ckpt.config_json = r.bytes(r.u64("config length"), "config");
  const uint64_t n_tensors = r.u64("tensor count");
  ckpt.tensors.resize(n_tensors);
  for (auto& t : ckpt.tensors) {
    t.name = r.bytes(r.u64("name length"), "tensor name");
    const uint8_t dtype = r.u8("dtype");
    check(dtype == 0, "checkpoint '", path, "': tensor '", t.name, "' has dtype ",
          static_cast<int>(dtype), ", expected 0 (float32)");
    const uint8_t ndim = r.u8("ndim");
    t.shape.resize(ndim);
    for (auto& d : t.shape) d = static_cast<int64_t>(r.u64("dim"));
    const int64_t numel = shape_numel(t.shape);
    t.data.resize(static_cast<size_t>(numel));
    for (auto& v : t.data) v = std::bit_cast<float>(r.u32("tensor data"));
  }
  return ckpt;
}

inline Checkpoint checkpoint_from_params(const nn::ParamMap& params, std::string config_json) {
  Checkpoint ckpt;
  ckpt.config_json = std::move(config_json);
  for (const auto& [name, p] : params) {
    NamedTensor t;
    t.name = name;
    t.shape = p->value.shape();
    t.data.resize(static_cast<size_t>(p->value.numel()));
    for (int64_t i = 0; i < p->value.numel(); ++i)
      t.data[static_cast<size_t>(i)] = static_cast<float>(p->value[i]);
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

/// Copies checkpoint tensors into the model parameters, insisting on an exact
/// name/shape match and reporting every difference at once.
inline void load_into_params(const Checkpoint& ckpt, const nn::ParamMap& params) {
  std::string diff;
  size_t matched = 0;
  for (const auto& [name, p] : params) {
    const NamedTensor* found = nullptr;
    for (const auto& t : ckpt.tensors)
      if (t.name == name) {
        found = &t;
        break;
      }
    if (!found) {
      diff += str_cat("  model tensor '", name, "' ", shape_str(p->value.shape()),
                      " missing from checkpoint\n");
      continue;
    }
    if (found->shape != p->value.shape()) {
      diff += str_cat("  tensor '", name, "': model ", shape_str(p->value.shape()),
                      " vs checkpoint ", shape_str(found->shape), "\n");
      continue;
    }
    ++matched;
  }
  if (ckpt.tensors.size() != params.size() || matched != params.size()) {
    for (const auto& t : ckpt.tensors) {
      bool known = false;
      for (const auto& [name, p] : params)
        if (name == t.name) known = true;
      if (!known)
        diff += str_cat("  checkpoint tensor '", t.name, "' ", shape_str(t.shape),
                        " unknown to the model\n");
    }
  }
  check(diff.empty(), "checkpoint/config mismatch:\n", diff);

  for (const auto& [name, p] : params)
    for (const auto& t : ckpt.tensors)
      if (t.name == name) {
        for (int64_t i = 0; i < p->value.numel(); ++i)
          p->value[i] = static_cast<double>(t.data[static_cast<size_t>(i)]);
        break;
      }
}

/// Atomic write: temp file in the same directory, then rename.
inline void save_checkpoint_file(const Checkpoint& ckpt, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    check(f.good(), "save_checkpoint: cannot open '", tmp, "'");
    const std::string data = encode_checkpoint(ckpt);
    f.write(data.data(), static_cast<std::streamsize>(data.size()));
    check(f.good(), "save_checkpoint: short write to '", tmp, "'");
  }
  check(std::rename(tmp.c_str(), path.c_str()) == 0, "save_checkpoint: cannot rename '", tmp,
        "' to '", path, "'");
}

inline Checkpoint load_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "load_checkpoint: cannot open '", path, "'");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(data, path);
}

inline void save_params(const nn::ParamMap& params, const std::string& config_json,
                        const std::string& path) {
  save_checkpoint_file(checkpoint_from_params(params, config_json), path);
}

}  // namespace beamclean::io
