#include "audiotag/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "audiotag/errors.hpp"

namespace audiotag::data {

DatasetManifest DatasetManifest::load(const std::string& path, int class_count,
                                      const std::string& split) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  DatasetManifest m;
  m.class_count = class_count;
  m.split = split;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("clip_id", 0) == 0) continue;
    std::istringstream ls(line);
    ManifestRow row;
    std::string labels;
    if (!std::getline(ls, row.clip_id, ',') || !std::getline(ls, row.path, ',') ||
        !std::getline(ls, labels)) {
      throw DataError("manifest: malformed row at line " + std::to_string(line_no) + ": " +
                      path);
    }
    std::istringstream lab(labels);
    std::string idx;
    while (std::getline(lab, idx, ';')) {
      if (idx.empty()) continue;
      try {
        row.labels.push_back(std::stoi(idx));
      } catch (const std::exception&) {
        throw DataError("manifest: bad label '" + idx + "' at line " +
                        std::to_string(line_no) + ": " + path);
      }
    }
    m.rows.push_back(std::move(row));
  }
  m.validate();
  return m;
}

void DatasetManifest::validate() const {
  if (class_count < 1) throw DataError("manifest: class_count must be >= 1");
  std::unordered_set<std::string> ids;
  for (const ManifestRow& row : rows) {
    if (!ids.insert(row.clip_id).second) {
      throw DataError("manifest: duplicate clip_id '" + row.clip_id + "'");
    }
    if (row.labels.empty()) {
      throw DataError("manifest: clip '" + row.clip_id + "' has no labels");
    }
    for (int l : row.labels) {
      if (l < 0 || l >= class_count) {
        throw DataError("manifest: label " + std::to_string(l) + " out of range for clip '" +
                        row.clip_id + "'");
      }
    }
  }
}

void DatasetManifest::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot create manifest: " + path);
  out << "clip_id,path,labels\n";
  for (const ManifestRow& row : rows) {
    out << row.clip_id << "," << row.path << ",";
    for (size_t i = 0; i < row.labels.size(); ++i) {
      if (i) out << ";";
      out << row.labels[i];
    }
    out << "\n";
  }
  if (!out) throw DataError("short write on manifest: " + path);
}

std::vector<double> compute_sample_weights(const DatasetManifest& manifest) {
  manifest.validate();
  std::vector<int64_t> counts(static_cast<size_t>(manifest.class_count), 0);
  for (const ManifestRow& row : manifest.rows) {
    for (int l : row.labels) ++counts[static_cast<size_t>(l)];
  }
  std::vector<double> weights(manifest.rows.size(), 0.0);
  for (size_t i = 0; i < manifest.rows.size(); ++i) {
    double w = 0.0;
    for (int l : manifest.rows[i].labels) {
      w += 1.0 / static_cast<double>(counts[static_cast<size_t>(l)]);
    }
    weights[i] = w;
  }
  return weights;
}

void SamplerState::validate() const {
  if (weights.empty()) throw ConfigError("sampler: empty weight vector");
  if (epoch_samples < 1) throw ConfigError("sampler: epoch_samples must be >= 1");
  if (epoch_samples > static_cast<int64_t>(weights.size())) {
    throw ConfigError("sampler: epoch_samples " + std::to_string(epoch_samples) +
                      " exceeds population " + std::to_string(weights.size()));
  }
  bool any_positive = false;
  for (double w : weights) {
    if (w < 0.0 || !std::isfinite(w)) throw ConfigError("sampler: weights must be finite and >= 0");
    any_positive |= w > 0.0;
  }
  if (!any_positive) throw ConfigError("sampler: all weights are zero");
}

std::vector<int64_t> sample_without_replacement(const std::vector<double>& weights,
                                                int64_t n, std::mt19937& rng) {
  const auto pop = static_cast<int64_t>(weights.size());
  if (n > pop) throw ConfigError("sample_without_replacement: n exceeds population");
  std::exponential_distribution<double> expo(1.0);
  std::vector<std::pair<double, int64_t>> keys;
  keys.reserve(static_cast<size_t>(pop));
  for (int64_t i = 0; i < pop; ++i) {
    const double e = expo(rng);
    const double w = weights[static_cast<size_t>(i)];
    const double key = w > 0.0 ? e / w : std::numeric_limits<double>::infinity();
    keys.emplace_back(key, i);
  }
  std::partial_sort(keys.begin(), keys.begin() + n, keys.end());
  std::vector<int64_t> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = keys[static_cast<size_t>(i)].second;
  return out;
}

std::vector<int64_t> sample_epoch(const SamplerState& state, int64_t epoch) {
  state.validate();
  std::seed_seq seq{static_cast<uint64_t>(state.seed), static_cast<uint64_t>(epoch),
                    uint64_t{0x9e3779b97f4a7c15ULL}};
  std::mt19937 rng(seq);
  return sample_without_replacement(state.weights, state.epoch_samples, rng);
}

WaveformClip roll_waveform(const WaveformClip& clip, int64_t shift) {
  const auto n = static_cast<int64_t>(clip.samples.size());
  if (n == 0) return clip;
  if (shift <= -n || shift >= n) throw ConfigError("roll_waveform: |shift| must be < length");
  WaveformClip out = clip;
  int64_t s = shift % n;
  if (s < 0) s += n;
  if (s == 0) return out;
  for (int64_t i = 0; i < n; ++i) {
    out.samples[static_cast<size_t>((i + s) % n)] = clip.samples[static_cast<size_t>(i)];
  }
  return out;
}

WaveformClip gain_augment(const WaveformClip& clip, std::mt19937& rng, double range_db) {
  std::uniform_real_distribution<double> dist(-range_db, range_db);
  const double g = std::pow(10.0, dist(rng) / 20.0);
  WaveformClip out = clip;
  for (float& s : out.samples) {
    s = static_cast<float>(std::min(1.0, std::max(-1.0, static_cast<double>(s) * g)));
  }
  return out;
}

MelSpectrogram spec_masking(const MelSpectrogram& spec, std::mt19937& rng,
                            const MaskSpec& masks) {
  if (masks.max_time_width > spec.frames || masks.max_freq_width > spec.n_mels) {
    throw ConfigError("spec_masking: mask size exceeds spectrogram dims");
  }
  MelSpectrogram out = spec;
  double mean = 0.0;
  for (float v : spec.values) mean += v;
  mean /= static_cast<double>(spec.values.size());
  const auto fill = static_cast<float>(mean);

  for (int m = 0; m < masks.n_time_masks; ++m) {
    if (masks.max_time_width < 1) break;
    std::uniform_int_distribution<int> width_dist(1, masks.max_time_width);
    const int width = width_dist(rng);
    std::uniform_int_distribution<int> start_dist(0, spec.frames - width);
    const int start = start_dist(rng);
    for (int f = 0; f < spec.n_mels; ++f) {
      for (int t = start; t < start + width; ++t) out.at(f, t) = fill;
    }
  }
  for (int m = 0; m < masks.n_freq_masks; ++m) {
    if (masks.max_freq_width < 1) break;
    std::uniform_int_distribution<int> width_dist(1, masks.max_freq_width);
    const int width = width_dist(rng);
    std::uniform_int_distribution<int> start_dist(0, spec.n_mels - width);
    const int start = start_dist(rng);
    for (int f = start; f < start + width; ++f) {
      for (int t = 0; t < spec.frames; ++t) out.at(f, t) = fill;
    }
  }
  return out;
}

}  // namespace audiotag::data
