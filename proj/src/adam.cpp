#include "audiotag/nn/adam.hpp"

#include <cmath>

namespace audiotag::nn {

template <typename T>
void AdamState<T>::init(const std::vector<ParamRef<T>>& params) {
  m.clear();
  v.clear();
  for (const ParamRef<T>& p : params) {
    m.emplace_back(p.value->shape());
    v.emplace_back(p.value->shape());
  }
  step = 0;
}

template <typename T>
void adam_step(std::vector<ParamRef<T>>& params, AdamState<T>& state, double lr,
               const AdamConfig& cfg) {
  if (!state.initialized()) state.init(params);
  if (state.m.size() != params.size()) {
    throw ShapeError("adam: state does not match parameter list");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  bool finite = true;
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = *params[i].value;
    Tensor<T>& g = *params[i].grad;
    Tensor<T>& m = state.m[i];
    Tensor<T>& v = state.v[i];
    if (!p.same_shape(g) || !p.same_shape(m)) {
      throw ShapeError("adam: shape mismatch for " + params[i].name);
    }
    const int64_t n = p.numel();
#pragma omp parallel for schedule(static) reduction(&& : finite)
    for (int64_t j = 0; j < n; ++j) {
      const double gj = static_cast<double>(g[j]);
      finite = finite && std::isfinite(gj);
      const double mj = cfg.beta1 * static_cast<double>(m[j]) + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * static_cast<double>(v[j]) + (1.0 - cfg.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      p[j] = static_cast<T>(static_cast<double>(p[j]) -
                            lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps));
    }
  }
  if (!finite) throw NumericError("adam: non-finite gradient encountered");
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(std::vector<ParamRef<float>>&, AdamState<float>&, double,
                               const AdamConfig&);
template void adam_step<double>(std::vector<ParamRef<double>>&, AdamState<double>&, double,
                                const AdamConfig&);

}  // namespace audiotag::nn
