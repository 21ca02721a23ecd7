#pragma once

#include <string>
#include <vector>

namespace audiotag {

// Mono waveform with amplitudes in [-1, 1].
struct WaveformClip {
  std::vector<float> samples;
  int sample_rate = 0;
  std::string clip_id;
};

// Reads a RIFF/WAVE file (PCM 16/24/32-bit or IEEE float32, any channel
// count), averages channels to mono and resamples to target_sr.
// clip_id is set to the file name without directory and extension.
// Throws DataError for unreadable/undecodable or zero-length audio.
WaveformClip load_waveform(const std::string& path, int target_sr);

// Writes a mono PCM16 WAV file. Used by the synthetic dataset generator.
void write_wav_pcm16(const std::string& path, const std::vector<float>& samples,
                     int sample_rate);

// Linear-interpolation resampler; returns round(n * to_sr / from_sr) samples.
std::vector<float> resample_linear(const std::vector<float>& x, int from_sr, int to_sr);

}  // namespace audiotag
