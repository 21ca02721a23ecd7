#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "audiotag/wav.hpp"

namespace audiotag {

struct MelConfig {
  int sample_rate = 32000;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  int n_mels = 128;
  double fmin = 0.0;
  double fmax = 16000.0;
  double log_floor = 1e-5;

  int window_samples() const;
  int hop_samples() const;
  void validate() const;  // throws ConfigError
};

// Log-mel matrix, n_mels rows by frames columns, row-major.
struct MelSpectrogram {
  int n_mels = 0;
  int frames = 0;
  std::vector<float> values;
  MelConfig config;
  std::string clip_id;

  float& at(int f, int t) { return values[static_cast<size_t>(f) * frames + t]; }
  float at(int f, int t) const { return values[static_cast<size_t>(f) * frames + t]; }
};

// Number of analysis frames for a signal of n_samples. Frames start at every
// multiple of the hop; the tail window is zero-padded, so T = ceil(N / hop).
// Throws DataError when the signal is shorter than one window.
int frame_count(int64_t n_samples, const MelConfig& cfg);

// Log-mel spectrogram: periodic Hann window, power spectrum via FFT,
// triangular area-normalized mel filterbank, log(mel_power + log_floor).
MelSpectrogram compute_mel(const WaveformClip& clip, const MelConfig& cfg);

// Triangular mel filterbank as a dense [n_mels x (n_fft/2+1)] matrix.
// Exposed for the frontend tests' direct-DFT oracle.
std::vector<double> mel_filterbank(const MelConfig& cfg, int n_fft);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Center frequencies of the triangular filters (the filter apexes).
std::vector<double> mel_band_centers(const MelConfig& cfg);

// In-place iterative radix-2 FFT over interleaved complex data; n must be a
// power of two.
void fft_radix2(std::vector<double>& re, std::vector<double>& im);

}  // namespace audiotag
