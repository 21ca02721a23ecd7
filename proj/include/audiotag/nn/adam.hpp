#pragma once

#include <cstdint>
#include <vector>

#include "audiotag/nn/layers.hpp"

namespace audiotag::nn {

// Adam moments, aligned with the parameter list order.
template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  int64_t step = 0;

  void init(const std::vector<ParamRef<T>>& params);
  bool initialized() const { return !m.empty(); }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // no weight decay
};

// One adaptive-moment update with bias correction. Gradients are left
// untouched (the trainer zeroes them). Throws NumericError on non-finite
// gradients.
template <typename T>
void adam_step(std::vector<ParamRef<T>>& params, AdamState<T>& state, double lr,
               const AdamConfig& cfg = {});

}  // namespace audiotag::nn
