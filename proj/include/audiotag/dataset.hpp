#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "audiotag/mel.hpp"
#include "audiotag/wav.hpp"

namespace audiotag::data {

struct ManifestRow {
  std::string clip_id;
  std::string path;  // relative to the dataset root
  std::vector<int> labels;
};

// Weakly-labeled multi-label manifest. CSV format:
//   clip_id,path,labels      (labels = semicolon-separated class indices)
struct DatasetManifest {
  std::vector<ManifestRow> rows;
  int class_count = 527;
  std::string split;  // "train" or "eval"

  static DatasetManifest load(const std::string& path, int class_count,
                              const std::string& split);
  void validate() const;  // unique ids, labels in range, non-empty label lists
  void save(const std::string& path) const;
};

// Label-frequency importance weights: with count(l) = number of clips carrying
// label l, weight(clip) = sum over its labels of 1 / count(l).
std::vector<double> compute_sample_weights(const DatasetManifest& manifest);

struct SamplerState {
  std::vector<double> weights;
  uint64_t seed = 0;
  int64_t epoch_samples = 100000;

  void validate() const;
};

// Weighted sampling without replacement by exponential sort: each index gets
// key Exp(1)/weight and the epoch_samples smallest keys win. Returns indices
// in key order. Deterministic for a fixed (seed, epoch).
std::vector<int64_t> sample_epoch(const SamplerState& state, int64_t epoch);

// Low-level variant drawing from an explicit generator.
std::vector<int64_t> sample_without_replacement(const std::vector<double>& weights,
                                                int64_t n, std::mt19937& rng);

// Circular shift over the time axis; positive shift moves samples forward.
WaveformClip roll_waveform(const WaveformClip& clip, int64_t shift);

// Scales the waveform by a gain drawn uniformly from [-range_db, +range_db],
// clipping the result to [-1, 1].
WaveformClip gain_augment(const WaveformClip& clip, std::mt19937& rng,
                          double range_db = 7.0);

struct MaskSpec {
  int n_time_masks = 0;
  int max_time_width = 0;
  int n_freq_masks = 0;
  int max_freq_width = 0;
};

// SpecAugment-style masking: chosen time columns / frequency rows are set to
// the per-spectrogram mean value.
MelSpectrogram spec_masking(const MelSpectrogram& spec, std::mt19937& rng,
                            const MaskSpec& masks);

struct AugmentConfig {
  bool masking = false;
  bool rolling = false;
  bool gain = false;
  bool mixup = true;  // final configuration keeps only mixup
  MaskSpec masks{2, 8, 2, 8};
  int64_t roll_max = 4000;
  double gain_db = 7.0;
};

}  // namespace audiotag::data
