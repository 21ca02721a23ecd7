#include "audiotag/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "audiotag/errors.hpp"

namespace audiotag {

namespace {

uint32_t read_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t read_u16(const uint8_t* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

float clamp1(float v) { return std::min(1.0f, std::max(-1.0f, v)); }

}  // namespace

std::vector<float> resample_linear(const std::vector<float>& x, int from_sr, int to_sr) {
  if (from_sr == to_sr) return x;
  if (x.empty()) return {};
  const double ratio = static_cast<double>(to_sr) / from_sr;
  const auto n_out = static_cast<int64_t>(std::llround(static_cast<double>(x.size()) * ratio));
  std::vector<float> out(static_cast<size_t>(std::max<int64_t>(n_out, 1)));
  const double step = static_cast<double>(from_sr) / to_sr;
  const int64_t last = static_cast<int64_t>(x.size()) - 1;
  for (int64_t i = 0; i < static_cast<int64_t>(out.size()); ++i) {
    double pos = static_cast<double>(i) * step;
    auto i0 = static_cast<int64_t>(pos);
    if (i0 >= last) {
      out[static_cast<size_t>(i)] = x[static_cast<size_t>(last)];
      continue;
    }
    const double frac = pos - static_cast<double>(i0);
    out[static_cast<size_t>(i)] =
        static_cast<float>(x[static_cast<size_t>(i0)] * (1.0 - frac) +
                           x[static_cast<size_t>(i0 + 1)] * frac);
  }
  return out;
}

WaveformClip load_waveform(const std::string& path, int target_sr) {
  if (target_sr <= 0) throw ConfigError("target sample rate must be positive");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open audio file: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw DataError("not a RIFF/WAVE file: " + path);
  }

  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t sample_rate = 0;
  const uint8_t* data_ptr = nullptr;
  size_t data_len = 0;

  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const uint8_t* chunk = bytes.data() + pos;
    uint32_t chunk_len = read_u32(chunk + 4);
    const uint8_t* body = chunk + 8;
    if (pos + 8 + chunk_len > bytes.size()) {
      chunk_len = static_cast<uint32_t>(bytes.size() - pos - 8);
    }
    if (std::memcmp(chunk, "fmt ", 4) == 0 && chunk_len >= 16) {
      format = read_u16(body);
      channels = read_u16(body + 2);
      sample_rate = read_u32(body + 4);
      bits = read_u16(body + 14);
      if (format == 0xFFFE && chunk_len >= 40) {
        // WAVE_FORMAT_EXTENSIBLE: the first two bytes of the SubFormat GUID
        // carry the actual format tag.
        format = read_u16(body + 24);
      }
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data_ptr = body;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }

  if (channels == 0 || sample_rate == 0) throw DataError("missing fmt chunk: " + path);
  if (data_ptr == nullptr) throw DataError("missing data chunk: " + path);
  const bool pcm_int = format == 1 && (bits == 16 || bits == 24 || bits == 32);
  const bool pcm_float = format == 3 && bits == 32;
  if (!pcm_int && !pcm_float) {
    throw DataError("unsupported WAV encoding (format " + std::to_string(format) +
                    ", " + std::to_string(bits) + " bit): " + path);
  }

  const size_t bytes_per_sample = bits / 8;
  const size_t frame_size = bytes_per_sample * channels;
  const size_t n_frames = data_len / frame_size;
  if (n_frames == 0) throw DataError("zero-length audio: " + path);

  std::vector<float> mono(n_frames, 0.0f);
  for (size_t f = 0; f < n_frames; ++f) {
    double acc = 0.0;
    for (size_t c = 0; c < channels; ++c) {
      const uint8_t* s = data_ptr + f * frame_size + c * bytes_per_sample;
      double v = 0.0;
      if (pcm_float) {
        float fv;
        std::memcpy(&fv, s, 4);
        v = fv;
      } else if (bits == 16) {
        auto raw = static_cast<int16_t>(s[0] | (s[1] << 8));
        v = raw / 32768.0;
      } else if (bits == 24) {
        int32_t raw = s[0] | (s[1] << 8) | (s[2] << 16);
        if (raw & 0x800000) raw |= ~0xFFFFFF;  // sign-extend
        v = raw / 8388608.0;
      } else {
        int32_t raw;
        std::memcpy(&raw, s, 4);
        v = raw / 2147483648.0;
      }
      acc += v;
    }
    mono[f] = clamp1(static_cast<float>(acc / channels));
  }

  WaveformClip clip;
  clip.samples = resample_linear(mono, static_cast<int>(sample_rate), target_sr);
  clip.sample_rate = target_sr;
  clip.clip_id = std::filesystem::path(path).stem().string();
  return clip;
}

void write_wav_pcm16(const std::string& path, const std::vector<float>& samples,
                     int sample_rate) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot create WAV file: " + path);

  auto put_u32 = [&out](uint32_t v) {
    uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                    static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
  };
  auto put_u16 = [&out](uint16_t v) {
    uint8_t b[2] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
  };

  const uint32_t data_len = static_cast<uint32_t>(samples.size() * 2);
  out.write("RIFF", 4);
  put_u32(36 + data_len);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(16);
  put_u16(1);  // PCM
  put_u16(1);  // mono
  put_u32(static_cast<uint32_t>(sample_rate));
  put_u32(static_cast<uint32_t>(sample_rate) * 2);
  put_u16(2);
  put_u16(16);
  out.write("data", 4);
  put_u32(data_len);
  for (float s : samples) {
    auto v = static_cast<int32_t>(std::lrint(clamp1(s) * 32767.0f));
    v = std::min<int32_t>(32767, std::max<int32_t>(-32768, v));
    auto raw = static_cast<int16_t>(v);
    uint8_t b[2] = {static_cast<uint8_t>(raw & 0xFF),
                    static_cast<uint8_t>((raw >> 8) & 0xFF)};
    out.write(reinterpret_cast<const char*>(b), 2);
  }
  if (!out) throw DataError("short write: " + path);
}

}  // namespace audiotag
