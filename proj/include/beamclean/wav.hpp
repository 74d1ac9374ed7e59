// Copyright 2026 The beamclean Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "beamclean/simulate.hpp"

namespace beamclean::io {

// RIFF/WAVE, PCM 16-bit little-endian only; samples map to [-1, 1) via 1/32768.

namespace wav_detail {

inline void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline uint16_t get_u16(const std::string& s, size_t off) {
  return static_cast<uint16_t>(static_cast<uint8_t>(s[off]) |
                               (static_cast<uint8_t>(s[off + 1]) << 8));
}
inline uint32_t get_u32(const std::string& s, size_t off) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(s[off + i])) << (8 * i);
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open '", path, "' for reading");
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

}  // namespace wav_detail

/// Reads a PCM16 WAV into channel-major samples. Rejects anything that is not
/// 16-bit PCM at 16 kHz, naming the offending header field.
inline sim::MultichannelWaveform read_wav(const std::string& path) {
  const std::string d = wav_detail::read_file(path);
  check(d.size() >= 44, "wav '", path, "': file too short for a RIFF header");
  check(d.compare(0, 4, "RIFF") == 0, "wav '", path, "': missing RIFF magic");
  check(d.compare(8, 4, "WAVE") == 0, "wav '", path, "': missing WAVE form type");

  size_t off = 12;
  int channels = -1, sample_rate = -1, bits = -1, format = -1;
  size_t data_off = 0, data_len = 0;
  while (off + 8 <= d.size()) {
    const std::string id = d.substr(off, 4);
    const uint32_t len = wav_detail::get_u32(d, off + 4);
    const size_t body = off + 8;
    if (id == "fmt ") {
      check(body + 16 <= d.size(), "wav '", path, "': truncated fmt chunk");
      format = wav_detail::get_u16(d, body);
      channels = wav_detail::get_u16(d, body + 2);
      sample_rate = static_cast<int>(wav_detail::get_u32(d, body + 4));
      bits = wav_detail::get_u16(d, body + 14);
    } else if (id == "data") {
      data_off = body;
      data_len = len;
      check(body + len <= d.size(), "wav '", path, "': data chunk of ", len,
            " bytes runs past end of file (corrupt)");
    }
    off = body + len + (len % 2);  // chunks are word-aligned
  }
  check(format != -1, "wav '", path, "': no fmt chunk");
  check(format == 1, "wav '", path, "': fmt.audio_format=", format, ", expected 1 (PCM)");
  check(bits == 16, "wav '", path, "': fmt.bits_per_sample=", bits, ", expected 16");
  check(sample_rate == kSampleRate, "wav '", path, "': fmt.sample_rate=", sample_rate,
        ", expected ", kSampleRate);
  check(channels >= 1, "wav '", path, "': fmt.channels=", channels);
  check(data_off != 0, "wav '", path, "': no data chunk");
  check(data_len % (2 * static_cast<size_t>(channels)) == 0, "wav '", path,
        "': data chunk size not a whole number of frames (corrupt)");

  const int64_t n_frames = static_cast<int64_t>(data_len / (2 * static_cast<size_t>(channels)));
  sim::MultichannelWaveform out;
  out.sample_rate = sample_rate;
  out.channels = Tensor({channels, n_frames});
  for (int64_t t = 0; t < n_frames; ++t)
    for (int c = 0; c < channels; ++c) {
      const size_t p = data_off + 2 * (static_cast<size_t>(t) * channels + static_cast<size_t>(c));
      const int16_t s = static_cast<int16_t>(wav_detail::get_u16(d, p));
      out.channels.at(c, t) = static_cast<double>(s) / 32768.0;
    }
  return out;
}

/// Single-channel convenience wrapper.
inline dsp::Waveform read_wav_mono(const std::string& path) {
  sim::MultichannelWaveform m = read_wav(path);
  check(m.n_channels() == 1, "wav '", path, "': expected mono, got ", m.n_channels(),
        " channels");
  return m.channel(0);
}

/// Writes interleaved PCM16; out-of-range samples are clipped (with warning).
inline void write_wav(const Tensor& channels, const std::string& path,
                      int sample_rate = kSampleRate) {
  check(channels.ndim() == 2 && channels.dim(0) >= 1 && channels.dim(1) >= 1,
        "write_wav: expected [C,T] samples");
  const int64_t c = channels.dim(0), t = channels.dim(1);
  bool clipped = false;

  std::string pcm;
  pcm.reserve(static_cast<size_t>(2 * c * t));
  for (int64_t i = 0; i < t; ++i)
    for (int64_t ch = 0; ch < c; ++ch) {
      double v = channels.at(ch, i);
      check(std::isfinite(v), "write_wav: non-finite sample at channel ", ch, " index ", i);
      long q = std::lround(v * 32768.0);
      if (q > 32767 || q < -32768) {
        clipped = true;
        q = std::clamp(q, -32768L, 32767L);
      }
      wav_detail::put_u16(pcm, static_cast<uint16_t>(static_cast<int16_t>(q)));
    }
  if (clipped) log_warn("write_wav: samples outside [-1,1) clipped in '", path, "'");

  std::string out;
  out += "RIFF";
  wav_detail::put_u32(out, static_cast<uint32_t>(36 + pcm.size()));
  out += "WAVE";
  out += "fmt ";
  wav_detail::put_u32(out, 16);
  wav_detail::put_u16(out, 1);                                   // PCM
  wav_detail::put_u16(out, static_cast<uint16_t>(c));
  wav_detail::put_u32(out, static_cast<uint32_t>(sample_rate));
  wav_detail::put_u32(out, static_cast<uint32_t>(sample_rate * c * 2));  // byte rate
  wav_detail::put_u16(out, static_cast<uint16_t>(c * 2));                // block align
  wav_detail::put_u16(out, 16);                                          // bits
  out += "data";
  wav_detail::put_u32(out, static_cast<uint32_t>(pcm.size()));
  out += pcm;

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "write_wav: cannot open '", path, "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  check(f.good(), "write_wav: short write to '", path, "'");
}

inline void write_wav(const dsp::Waveform& wave, const std::string& path) {
  Tensor t({1, wave.length()});
  for (int64_t i = 0; i < wave.length(); ++i) t.at(0, i) = wave.samples[static_cast<size_t>(i)];
  write_wav(t, path, wave.sample_rate);
}

}  // namespace beamclean::io
