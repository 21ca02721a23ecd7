#include "audiotag/mel.hpp"

#include <cmath>

#include "audiotag/errors.hpp"

namespace audiotag {

namespace {
constexpr double kPi = 3.14159265358979323846;

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}
}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

int MelConfig::window_samples() const {
  return static_cast<int>(std::lround(sample_rate * window_ms / 1000.0));
}

int MelConfig::hop_samples() const {
  return static_cast<int>(std::lround(sample_rate * hop_ms / 1000.0));
}

void MelConfig::validate() const {
  if (sample_rate <= 0) throw ConfigError("mel: sample_rate must be positive");
  if (window_ms <= 0 || hop_ms <= 0) throw ConfigError("mel: window/hop must be positive");
  if (window_ms < hop_ms) throw ConfigError("mel: window_ms must be >= hop_ms");
  if (n_mels < 1) throw ConfigError("mel: n_mels must be >= 1");
  if (fmin < 0 || fmin >= fmax) throw ConfigError("mel: need 0 <= fmin < fmax");
  if (fmax > sample_rate / 2.0) throw ConfigError("mel: fmax above Nyquist");
  if (log_floor <= 0) throw ConfigError("mel: log_floor must be positive");
}

int frame_count(int64_t n_samples, const MelConfig& cfg) {
  cfg.validate();
  const int win = cfg.window_samples();
  const int hop = cfg.hop_samples();
  if (n_samples < win) {
    throw DataError("signal shorter than one analysis window (" +
                    std::to_string(n_samples) + " < " + std::to_string(win) + ")");
  }
  return static_cast<int>((n_samples + hop - 1) / hop);
}

void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
  const size_t n = re.size();
  if (n == 0 || (n & (n - 1)) != 0 || im.size() != n) {
    throw ShapeError("fft: size must be a power of two");
  }
  // bit-reversal permutation
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const double wr = std::cos(ang), wi = std::sin(ang);
    for (size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (size_t k = 0; k < len / 2; ++k) {
        const size_t a = i + k, b = i + k + len / 2;
        const double tr = re[b] * cr - im[b] * ci;
        const double ti = re[b] * ci + im[b] * cr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
        const double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

std::vector<double> mel_band_centers(const MelConfig& cfg) {
  const double mlo = hz_to_mel(cfg.fmin), mhi = hz_to_mel(cfg.fmax);
  std::vector<double> centers(static_cast<size_t>(cfg.n_mels));
  for (int m = 0; m < cfg.n_mels; ++m) {
    centers[static_cast<size_t>(m)] =
        mel_to_hz(mlo + (mhi - mlo) * (m + 1) / (cfg.n_mels + 1));
  }
  return centers;
}

std::vector<double> mel_filterbank(const MelConfig& cfg, int n_fft) {
  const int bins = n_fft / 2 + 1;
  const double mlo = hz_to_mel(cfg.fmin), mhi = hz_to_mel(cfg.fmax);
  std::vector<double> pts(static_cast<size_t>(cfg.n_mels) + 2);
  for (int i = 0; i < cfg.n_mels + 2; ++i) {
    pts[static_cast<size_t>(i)] = mel_to_hz(mlo + (mhi - mlo) * i / (cfg.n_mels + 1));
  }
  std::vector<double> fb(static_cast<size_t>(cfg.n_mels) * bins, 0.0);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = pts[static_cast<size_t>(m)];
    const double mid = pts[static_cast<size_t>(m) + 1];
    const double hi = pts[static_cast<size_t>(m) + 2];
    const double norm = 2.0 / (hi - lo);  // area normalization
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / n_fft;
      double w = 0.0;
      if (f > lo && f < mid) {
        w = (f - lo) / (mid - lo);
      } else if (f >= mid && f < hi) {
        w = (hi - f) / (hi - mid);
      }
      fb[static_cast<size_t>(m) * bins + k] = w * norm;
    }
  }
  return fb;
}

MelSpectrogram compute_mel(const WaveformClip& clip, const MelConfig& cfg) {
  cfg.validate();
  if (clip.sample_rate != cfg.sample_rate) {
    throw ShapeError("compute_mel: clip sample rate " + std::to_string(clip.sample_rate) +
                     " does not match config " + std::to_string(cfg.sample_rate));
  }
  const int win = cfg.window_samples();
  const int hop = cfg.hop_samples();
  const auto n = static_cast<int64_t>(clip.samples.size());
  const int frames = frame_count(n, cfg);
  const int n_fft = next_pow2(win);
  const int bins = n_fft / 2 + 1;

  std::vector<double> window(static_cast<size_t>(win));
  for (int i = 0; i < win; ++i) {
    window[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / win);
  }
  const std::vector<double> fb = mel_filterbank(cfg, n_fft);

  MelSpectrogram out;
  out.n_mels = cfg.n_mels;
  out.frames = frames;
  out.values.assign(static_cast<size_t>(cfg.n_mels) * frames, 0.0f);
  out.config = cfg;
  out.clip_id = clip.clip_id;

  std::vector<double> re(static_cast<size_t>(n_fft)), im(static_cast<size_t>(n_fft));
  std::vector<double> power(static_cast<size_t>(bins));
  for (int t = 0; t < frames; ++t) {
    const int64_t start = static_cast<int64_t>(t) * hop;
    std::fill(re.begin(), re.end(), 0.0);
    std::fill(im.begin(), im.end(), 0.0);
    const int64_t avail = std::min<int64_t>(win, n - start);
    for (int64_t i = 0; i < avail; ++i) {
      re[static_cast<size_t>(i)] =
          static_cast<double>(clip.samples[static_cast<size_t>(start + i)]) *
          window[static_cast<size_t>(i)];
    }
    fft_radix2(re, im);
    for (int k = 0; k < bins; ++k) {
      power[static_cast<size_t>(k)] = re[static_cast<size_t>(k)] * re[static_cast<size_t>(k)] +
                                      im[static_cast<size_t>(k)] * im[static_cast<size_t>(k)];
    }
    for (int m = 0; m < cfg.n_mels; ++m) {
      double acc = 0.0;
      const double* row = fb.data() + static_cast<size_t>(m) * bins;
      for (int k = 0; k < bins; ++k) acc += row[k] * power[static_cast<size_t>(k)];
      out.at(m, t) = static_cast<float>(std::log(acc + cfg.log_floor));
    }
  }
  return out;
}

}  // namespace audiotag
