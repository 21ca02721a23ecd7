#include "audiotag/distill.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "audiotag/errors.hpp"

namespace audiotag::kd {

void KDConfig::validate() const {
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("kd: lambda must be in [0, 1]");
  if (tau <= 0.0) throw ConfigError("kd: tau must be positive");
  if (mixup_alpha < 0.0) throw ConfigError("kd: mixup_alpha must be >= 0");
}

void TeacherLogitsStore::validate() const {
  if (class_count < 1) throw DataError("logits store: class_count must be >= 1");
  for (const auto& [id, vec] : logits) {
    if (static_cast<int>(vec.size()) != class_count) {
      throw DataError("logits store: clip '" + id + "' has " + std::to_string(vec.size()) +
                      " values, expected " + std::to_string(class_count));
    }
    for (float v : vec) {
      if (!std::isfinite(v)) throw DataError("logits store: non-finite value for '" + id + "'");
    }
  }
}

namespace {

// Stable BCE between sigmoid(z) and target t:
//   max(z, 0) - z*t + log(1 + exp(-|z|))
template <typename T>
inline T bce_with_logits(T z, T t) {
  const T zpos = z > T(0) ? z : T(0);
  const T az = z > T(0) ? z : -z;
  return zpos - z * t + std::log1p(std::exp(-az));
}

template <typename T>
inline T sigmoid(T z) {
  if (z >= T(0)) {
    return T(1) / (T(1) + std::exp(-z));
  }
  const T e = std::exp(z);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
T kd_loss(const T* student_logits, const T* hard_labels, const T* teacher_soft,
          int64_t batch, int64_t classes, double lambda) {
  if (batch < 1 || classes < 1) throw ShapeError("kd_loss: empty batch");
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("kd_loss: lambda must be in [0, 1]");
  const int64_t n = batch * classes;
  double label_acc = 0.0, distill_acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const T z = student_logits[i];
    const T y = hard_labels[i];
    const T t = teacher_soft[i];
    if (!std::isfinite(static_cast<double>(z)) || !std::isfinite(static_cast<double>(y)) ||
        !std::isfinite(static_cast<double>(t))) {
      throw NumericError("kd_loss: non-finite input at flat index " + std::to_string(i));
    }
    if (lambda > 0.0) label_acc += static_cast<double>(bce_with_logits(z, y));
    if (lambda < 1.0) distill_acc += static_cast<double>(bce_with_logits(z, t));
  }
  const double mean_label = label_acc / static_cast<double>(n);
  const double mean_distill = distill_acc / static_cast<double>(n);
  return static_cast<T>(lambda * mean_label + (1.0 - lambda) * mean_distill);
}

template <typename T>
T kd_loss_grad(const T* student_logits, const T* hard_labels, const T* teacher_soft,
               int64_t batch, int64_t classes, double lambda, T* grad) {
  const T loss = kd_loss(student_logits, hard_labels, teacher_soft, batch, classes, lambda);
  const int64_t n = batch * classes;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (int64_t i = 0; i < n; ++i) {
    const double s = static_cast<double>(sigmoid(student_logits[i]));
    const double g = lambda * (s - static_cast<double>(hard_labels[i])) +
                     (1.0 - lambda) * (s - static_cast<double>(teacher_soft[i]));
    grad[i] = static_cast<T>(g * inv_n);
  }
  return loss;
}

template float kd_loss<float>(const float*, const float*, const float*, int64_t, int64_t,
                              double);
template double kd_loss<double>(const double*, const double*, const double*, int64_t,
                                int64_t, double);
template float kd_loss_grad<float>(const float*, const float*, const float*, int64_t,
                                   int64_t, double, float*);
template double kd_loss_grad<double>(const double*, const double*, const double*, int64_t,
                                     int64_t, double, double*);

std::vector<float> teacher_soft_labels(const std::vector<float>& logits, double tau) {
  if (tau <= 0.0) throw ConfigError("teacher_soft_labels: tau must be positive");
  std::vector<float> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) throw NumericError("teacher_soft_labels: non-finite logit");
    out[i] = static_cast<float>(sigmoid(static_cast<double>(logits[i]) / tau));
  }
  return out;
}

TeacherLogitsStore average_ensemble(const std::vector<TeacherLogitsStore>& stores) {
  if (stores.empty()) throw ConfigError("average_ensemble: empty store list");
  const TeacherLogitsStore& first = stores.front();
  first.validate();
  for (size_t s = 1; s < stores.size(); ++s) {
    stores[s].validate();
    if (stores[s].class_count != first.class_count) {
      throw DataError("average_ensemble: class count mismatch (" +
                      std::to_string(stores[s].class_count) + " vs " +
                      std::to_string(first.class_count) + ")");
    }
    std::string missing;
    int n_missing = 0;
    for (const auto& [id, _] : first.logits) {
      if (!stores[s].logits.count(id)) {
        if (n_missing < 8) missing += (n_missing ? ", " : "") + id;
        ++n_missing;
      }
    }
    for (const auto& [id, _] : stores[s].logits) {
      if (!first.logits.count(id)) {
        if (n_missing < 8) missing += (n_missing ? ", " : "") + id;
        ++n_missing;
      }
    }
    if (n_missing > 0) {
      throw DataError("average_ensemble: clip id sets differ (" + std::to_string(n_missing) +
                      " mismatches: " + missing + ")");
    }
  }

  TeacherLogitsStore out;
  out.class_count = first.class_count;
  out.teacher_name = "ensemble(" + std::to_string(stores.size()) + ")";
  const double inv = 1.0 / static_cast<double>(stores.size());
  for (const auto& [id, base] : first.logits) {
    std::vector<double> acc(base.size(), 0.0);
    for (const TeacherLogitsStore& s : stores) {
      const std::vector<float>& v = s.logits.at(id);
      for (size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
    }
    std::vector<float> mean(base.size());
    for (size_t i = 0; i < mean.size(); ++i) mean[i] = static_cast<float>(acc[i] * inv);
    out.logits.emplace(id, std::move(mean));
  }
  return out;
}

TrainingExample mixup_pair(const TrainingExample& a, const TrainingExample& b, double lam) {
  if (a.n_mels != b.n_mels || a.frames != b.frames || a.spec.size() != b.spec.size() ||
      a.hard_labels.size() != b.hard_labels.size() ||
      a.teacher_soft.size() != b.teacher_soft.size()) {
    throw ShapeError("mixup_pair: example shapes differ");
  }
  TrainingExample out = a;
  const auto l = static_cast<float>(lam);
  const float m = 1.0f - l;
  for (size_t i = 0; i < out.spec.size(); ++i) out.spec[i] = l * a.spec[i] + m * b.spec[i];
  for (size_t i = 0; i < out.hard_labels.size(); ++i) {
    out.hard_labels[i] = l * a.hard_labels[i] + m * b.hard_labels[i];
  }
  for (size_t i = 0; i < out.teacher_soft.size(); ++i) {
    out.teacher_soft[i] = l * a.teacher_soft[i] + m * b.teacher_soft[i];
  }
  return out;
}

double sample_mix_lambda(double alpha, std::mt19937& rng) {
  if (alpha <= 0.0) throw ConfigError("sample_mix_lambda: alpha must be positive");
  // Beta(a, a) via two gamma draws.
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double g1 = gamma(rng);
  const double g2 = gamma(rng);
  double u = (g1 + g2 > 0.0) ? g1 / (g1 + g2) : 0.5;
  return std::max(u, 1.0 - u);
}

namespace {

template <typename T>
void put_raw(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void get_raw(std::ifstream& in, T& v, const std::string& path) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("truncated logits store: " + path);
}

}  // namespace

void write_store(const TeacherLogitsStore& store, const std::string& path) {
  store.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot create logits store: " + path);
  out.write("KDL1", 4);
  put_raw(out, static_cast<uint32_t>(store.class_count));
  put_raw(out, static_cast<uint64_t>(store.logits.size()));
  for (const auto& [id, vec] : store.logits) {
    if (id.size() > 0xFFFF) throw DataError("clip id too long: " + id);
    put_raw(out, static_cast<uint16_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
    out.write(reinterpret_cast<const char*>(vec.data()),
              static_cast<std::streamsize>(vec.size() * sizeof(float)));
  }
  if (!out) throw DataError("short write on logits store: " + path);
}

TeacherLogitsStore read_store(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open logits store: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "KDL1", 4) != 0) {
    throw DataError("bad magic, not a KDL1 logits store: " + path);
  }
  TeacherLogitsStore store;
  uint32_t class_count = 0;
  uint64_t record_count = 0;
  get_raw(in, class_count, path);
  get_raw(in, record_count, path);
  if (class_count == 0) throw DataError("logits store with zero classes: " + path);
  store.class_count = static_cast<int>(class_count);
  for (uint64_t r = 0; r < record_count; ++r) {
    uint16_t id_len = 0;
    get_raw(in, id_len, path);
    std::string id(id_len, '\0');
    in.read(id.data(), id_len);
    if (!in) throw DataError("truncated logits store: " + path);
    std::vector<float> vec(class_count);
    in.read(reinterpret_cast<char*>(vec.data()),
            static_cast<std::streamsize>(vec.size() * sizeof(float)));
    if (!in) throw DataError("truncated logits store: " + path);
    if (!store.logits.emplace(std::move(id), std::move(vec)).second) {
      throw DataError("duplicate clip id in logits store: " + path);
    }
  }
  store.validate();
  return store;
}

TeacherLogitsStore store_from_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open logits csv: " + path);
  TeacherLogitsStore store;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("clip_id", 0) == 0) continue;
    std::istringstream ls(line);
    std::string id, field;
    if (!std::getline(ls, id, ',') || id.empty()) {
      throw DataError("logits csv: missing clip id at line " + std::to_string(line_no));
    }
    std::vector<float> vec;
    while (std::getline(ls, field, ',')) {
      try {
        vec.push_back(std::stof(field));
      } catch (const std::exception&) {
        throw DataError("logits csv: bad float '" + field + "' at line " +
                        std::to_string(line_no));
      }
    }
    if (vec.empty()) throw DataError("logits csv: no values at line " + std::to_string(line_no));
    if (store.class_count == 0) {
      store.class_count = static_cast<int>(vec.size());
    } else if (static_cast<int>(vec.size()) != store.class_count) {
      throw DataError("logits csv: row length " + std::to_string(vec.size()) +
                      " != " + std::to_string(store.class_count) + " at line " +
                      std::to_string(line_no));
    }
    if (!store.logits.emplace(std::move(id), std::move(vec)).second) {
      throw DataError("logits csv: duplicate clip id at line " + std::to_string(line_no));
    }
  }
  if (store.logits.empty()) throw DataError("logits csv is empty: " + path);
  store.validate();
  return store;
}

}  // namespace audiotag::kd
