#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace audiotag::kd {

struct KDConfig {
  double lambda = 0.1;      // label-loss weight
  double tau = 1.0;         // teacher temperature
  double mixup_alpha = 0.3; // Beta parameter for mixup draws

  void validate() const;  // throws ConfigError
};

// Pre-activation teacher logits keyed by clip id. Immutable after load.
struct TeacherLogitsStore {
  int class_count = 0;
  std::string teacher_name;
  std::map<std::string, std::vector<float>> logits;

  void validate() const;  // finite entries, consistent vector lengths
};

// One training item: spectrogram values, hard labels, teacher soft labels.
struct TrainingExample {
  int n_mels = 0;
  int frames = 0;
  std::vector<float> spec;          // n_mels x frames, row-major
  std::vector<float> hard_labels;   // in [0,1] (multi-hot before mixup)
  std::vector<float> teacher_soft;  // in (0,1)
  std::string clip_id;
};

// Weighted sum of label BCE and distillation BCE on sigmoid(student logits),
// averaged over batch and classes. teacher_soft must already be
// sigmoid(z_T / tau). Row-major batch x classes buffers.
template <typename T>
T kd_loss(const T* student_logits, const T* hard_labels, const T* teacher_soft,
          int64_t batch, int64_t classes, double lambda);

// Same, also writing d(loss)/d(student_logits) into grad.
template <typename T>
T kd_loss_grad(const T* student_logits, const T* hard_labels, const T* teacher_soft,
               int64_t batch, int64_t classes, double lambda, T* grad);

// sigmoid(z / tau), elementwise.
std::vector<float> teacher_soft_labels(const std::vector<float>& logits, double tau);

// Elementwise mean of logits across stores. All stores must share the same
// clip ids and class count; mismatches raise DataError listing missing ids.
TeacherLogitsStore average_ensemble(const std::vector<TeacherLogitsStore>& stores);

// lam * a + (1 - lam) * b on spectrogram, hard labels and teacher soft labels.
TrainingExample mixup_pair(const TrainingExample& a, const TrainingExample& b, double lam);

// Folded Beta(alpha, alpha) draw: max(u, 1 - u), so the result is in [0.5, 1]
// and the first argument of mixup_pair dominates.
double sample_mix_lambda(double alpha, std::mt19937& rng);

// Binary store format, little-endian:
//   magic "KDL1" | class_count u32 | record_count u64 |
//   per record: id_len u16 | id bytes (UTF-8) | class_count * float32
void write_store(const TeacherLogitsStore& store, const std::string& path);
TeacherLogitsStore read_store(const std::string& path);

// Rows of `clip_id,v0,v1,...` (one float per class); an optional header row
// starting with "clip_id" is skipped.
TeacherLogitsStore store_from_csv(const std::string& path);

}  // namespace audiotag::kd
