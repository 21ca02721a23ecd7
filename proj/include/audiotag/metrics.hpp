#pragma once

#include <cstdint>
#include <vector>

namespace audiotag::train {

struct EvalResult {
  std::vector<double> per_class_ap;  // NaN for classes without positives
  double map = 0.0;                  // mean over classes with >= 1 positive
  int classes_scored = 0;
};

// Average precision of one class from parallel score/label arrays.
// Equal scores form one atomic block: precision and recall only change at
// distinct-score thresholds, so an all-tied ranking yields the positive
// prevalence. Returns NaN when there is no positive example.
double average_precision(const std::vector<double>& scores, const std::vector<int>& labels);

// Row-major [n x classes] scores and {0,1} labels.
EvalResult mean_average_precision(const float* scores, const float* labels, int64_t n,
                                  int64_t classes);

}  // namespace audiotag::train
