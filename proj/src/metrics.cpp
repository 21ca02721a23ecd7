#include "audiotag/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "audiotag/errors.hpp"

namespace audiotag::train {

double average_precision(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ShapeError("average_precision: size mismatch");
  const size_t n = scores.size();
  int64_t total_pos = 0;
  for (int l : labels) total_pos += l;
  if (total_pos == 0) return std::numeric_limits<double>::quiet_NaN();

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&scores](size_t a, size_t b) { return scores[a] > scores[b]; });

  double ap = 0.0;
  int64_t tp = 0, seen = 0;
  size_t i = 0;
  while (i < n) {
    // advance over one block of equal scores
    size_t j = i;
    int64_t block_tp = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      block_tp += labels[order[j]];
      ++j;
    }
    tp += block_tp;
    seen += static_cast<int64_t>(j - i);
    if (block_tp > 0) {
      const double precision = static_cast<double>(tp) / static_cast<double>(seen);
      const double delta_recall =
          static_cast<double>(block_tp) / static_cast<double>(total_pos);
      ap += precision * delta_recall;
    }
    i = j;
  }
  return ap;
}

EvalResult mean_average_precision(const float* scores, const float* labels, int64_t n,
                                  int64_t classes) {
  if (n < 1 || classes < 1) throw ShapeError("mean_average_precision: empty input");
  EvalResult result;
  result.per_class_ap.resize(static_cast<size_t>(classes));
  double sum = 0.0;
  int scored = 0;
  std::vector<double> s(static_cast<size_t>(n));
  std::vector<int> y(static_cast<size_t>(n));
  for (int64_t c = 0; c < classes; ++c) {
    for (int64_t i = 0; i < n; ++i) {
      s[static_cast<size_t>(i)] = static_cast<double>(scores[i * classes + c]);
      y[static_cast<size_t>(i)] = labels[i * classes + c] > 0.5f ? 1 : 0;
    }
    const double ap = average_precision(s, y);
    result.per_class_ap[static_cast<size_t>(c)] = ap;
    if (!std::isnan(ap)) {
      sum += ap;
      ++scored;
    }
  }
  result.classes_scored = scored;
  result.map = scored > 0 ? sum / scored : 0.0;
  return result;
}

}  // namespace audiotag::train
