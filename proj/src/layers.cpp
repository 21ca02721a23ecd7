#include "audiotag/nn/layers.hpp"

#include <cmath>
#include <cstring>

#include "audiotag/nn/gemm.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace audiotag::nn {

namespace {

template <typename T>
void check_4d(const Tensor<T>& x, int64_t channels, const char* who) {
  if (x.ndim() != 4) throw ShapeError(std::string(who) + ": expected 4-d input");
  if (channels > 0 && x.dim(1) != channels) {
    throw ShapeError(std::string(who) + ": expected " + std::to_string(channels) +
                     " channels, got " + std::to_string(x.dim(1)));
  }
}

template <typename T>
void fill_normal(Tensor<T>& t, double stddev, std::mt19937& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(dist(rng));
}

template <typename T>
inline T sigmoid_scalar(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(int64_t cin, int64_t cout, int64_t kh, int64_t kw, int64_t stride_h,
                  int64_t stride_w, int64_t pad_h, int64_t pad_w, int64_t groups, bool bias,
                  std::mt19937& rng)
    : cin_(cin),
      cout_(cout),
      kh_(kh),
      kw_(kw),
      sh_(stride_h),
      sw_(stride_w),
      ph_(pad_h),
      pw_(pad_w),
      groups_(groups),
      has_bias_(bias) {
  if (cin < 1 || cout < 1 || kh < 1 || kw < 1 || stride_h < 1 || stride_w < 1 || groups < 1) {
    throw ConfigError("conv: dims must be >= 1");
  }
  if (cin % groups != 0 || cout % groups != 0) {
    throw ConfigError("conv: groups must divide cin and cout");
  }
  weight = Tensor<T>({cout, cin / groups, kh, kw});
  dweight = Tensor<T>(weight.shape());
  fill_normal(weight, std::sqrt(2.0 / static_cast<double>(cout * kh * kw)), rng);
  if (has_bias_) {
    this->bias = Tensor<T>({cout});
    dbias = Tensor<T>({cout});
  }
}

template <typename T>
void Conv2d<T>::out_dims(int64_t h, int64_t w, int64_t& ho, int64_t& wo) const {
  ho = (h + 2 * ph_ - kh_) / sh_ + 1;
  wo = (w + 2 * pw_ - kw_) / sw_ + 1;
  if (h + 2 * ph_ < kh_ || w + 2 * pw_ < kw_ || ho < 1 || wo < 1) {
    throw ShapeError("conv '" + name + "': input " + std::to_string(h) + "x" +
                     std::to_string(w) + " too small for kernel");
  }
}

// Writes the [cin*kh*kw, ho*wo] patch matrix of one sample into col with row
// stride ld (so batches can share one matrix).
template <typename T>
void Conv2d<T>::im2col(const T* x, int64_t h, int64_t w, int64_t ho, int64_t wo, T* col,
                       int64_t ld) const {
  const int64_t how = ho * wo;
  if (kh_ == 1 && kw_ == 1 && sh_ == 1 && sw_ == 1 && ph_ == 0 && pw_ == 0) {
    for (int64_t c = 0; c < cin_; ++c) {
      std::memcpy(col + c * ld, x + c * how, sizeof(T) * static_cast<size_t>(how));
    }
    return;
  }
  for (int64_t c = 0; c < cin_; ++c) {
    for (int64_t i = 0; i < kh_; ++i) {
      for (int64_t j = 0; j < kw_; ++j) {
        T* dst = col + ((c * kh_ + i) * kw_ + j) * ld;
        for (int64_t oh = 0; oh < ho; ++oh) {
          const int64_t ih = oh * sh_ + i - ph_;
          if (ih < 0 || ih >= h) {
            for (int64_t ow = 0; ow < wo; ++ow) dst[oh * wo + ow] = T(0);
            continue;
          }
          const T* src = x + (c * h + ih) * w;
          for (int64_t ow = 0; ow < wo; ++ow) {
            const int64_t iw = ow * sw_ + j - pw_;
            dst[oh * wo + ow] = (iw >= 0 && iw < w) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void Conv2d<T>::col2im(const T* col, int64_t h, int64_t w, int64_t ho, int64_t wo, T* dx,
                       int64_t ld) const {
  const int64_t how = ho * wo;
  if (kh_ == 1 && kw_ == 1 && sh_ == 1 && sw_ == 1 && ph_ == 0 && pw_ == 0) {
    for (int64_t c = 0; c < cin_; ++c) {
      const T* src = col + c * ld;
      T* dst = dx + c * how;
      for (int64_t p = 0; p < how; ++p) dst[p] += src[p];
    }
    return;
  }
  for (int64_t c = 0; c < cin_; ++c) {
    for (int64_t i = 0; i < kh_; ++i) {
      for (int64_t j = 0; j < kw_; ++j) {
        const T* src = col + ((c * kh_ + i) * kw_ + j) * ld;
        for (int64_t oh = 0; oh < ho; ++oh) {
          const int64_t ih = oh * sh_ + i - ph_;
          if (ih < 0 || ih >= h) continue;
          T* dst = dx + (c * h + ih) * w;
          for (int64_t ow = 0; ow < wo; ++ow) {
            const int64_t iw = ow * sw_ + j - pw_;
            if (iw >= 0 && iw < w) dst[iw] += src[oh * wo + ow];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, bool training) {
  check_4d(x, cin_, "conv");
  const int64_t batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  int64_t ho, wo;
  out_dims(h, w, ho, wo);
  Tensor<T> y({batch, cout_, ho, wo});
  const int64_t how = ho * wo;
  const int64_t in_plane = cin_ * h * w;

  if (groups_ == 1) {
    const int64_t k = cin_ * kh_ * kw_;
    const int64_t n = batch * how;
    std::vector<T> col(static_cast<size_t>(k * n));
    std::vector<T> ymat(static_cast<size_t>(cout_ * n));
#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < batch; ++b) {
      im2col(x.data() + b * in_plane, h, w, ho, wo, col.data() + b * how, n);
    }
    gemm(false, false, cout_, n, k, T(1), weight.data(), k, col.data(), n, T(0), ymat.data(),
         n);
#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t c = 0; c < cout_; ++c) {
        const T* src = ymat.data() + c * n + b * how;
        T* dst = y.data() + (b * cout_ + c) * how;
        const T bv = has_bias_ ? bias[c] : T(0);
        for (int64_t p = 0; p < how; ++p) dst[p] = src[p] + bv;
      }
    }
  } else if (groups_ == cin_ && cin_ == cout_) {
    // depthwise
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t c = 0; c < cout_; ++c) {
        const T* xp = x.data() + (b * cin_ + c) * h * w;
        const T* wp = weight.data() + c * kh_ * kw_;
        T* yp = y.data() + (b * cout_ + c) * how;
        const T bv = has_bias_ ? bias[c] : T(0);
        for (int64_t oh = 0; oh < ho; ++oh) {
          for (int64_t ow = 0; ow < wo; ++ow) {
            T acc = bv;
            for (int64_t i = 0; i < kh_; ++i) {
              const int64_t ih = oh * sh_ + i - ph_;
              if (ih < 0 || ih >= h) continue;
              for (int64_t j = 0; j < kw_; ++j) {
                const int64_t iw = ow * sw_ + j - pw_;
                if (iw < 0 || iw >= w) continue;
                acc += wp[i * kw_ + j] * xp[ih * w + iw];
              }
            }
            yp[oh * wo + ow] = acc;
          }
        }
      }
    }
  } else {
    // general grouped convolution, correctness path
    const int64_t cing = cin_ / groups_, coutg = cout_ / groups_;
    const int64_t k = cing * kh_ * kw_;
    std::vector<T> col(static_cast<size_t>(k * how));
    Conv2d<T> sub(*this);  // reuse im2col with cin = cing
    sub.cin_ = cing;
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t g = 0; g < groups_; ++g) {
        sub.im2col(x.data() + (b * cin_ + g * cing) * h * w, h, w, ho, wo, col.data(), how);
        gemm(false, false, coutg, how, k, T(1), weight.data() + g * coutg * k, k, col.data(),
             how, T(0), y.data() + (b * cout_ + g * coutg) * how, how);
      }
    }
    if (has_bias_) {
      for (int64_t b = 0; b < batch; ++b) {
        for (int64_t c = 0; c < cout_; ++c) {
          T* yp = y.data() + (b * cout_ + c) * how;
          for (int64_t p = 0; p < how; ++p) yp[p] += bias[c];
        }
      }
    }
  }
  if (training) x_ = x;
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy) {
  if (x_.empty()) throw ShapeError("conv '" + name + "': backward before forward");
  const int64_t batch = x_.dim(0), h = x_.dim(2), w = x_.dim(3);
  int64_t ho, wo;
  out_dims(h, w, ho, wo);
  check_4d(dy, cout_, "conv backward");
  if (dy.dim(0) != batch || dy.dim(2) != ho || dy.dim(3) != wo) {
    throw ShapeError("conv '" + name + "': gradient shape mismatch");
  }
  Tensor<T> dx(x_.shape());
  const int64_t how = ho * wo;
  const int64_t in_plane = cin_ * h * w;

  if (groups_ == 1) {
    const int64_t k = cin_ * kh_ * kw_;
    const int64_t n = batch * how;
    std::vector<T> col(static_cast<size_t>(k * n));
    std::vector<T> dymat(static_cast<size_t>(cout_ * n));
#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < batch; ++b) {
      im2col(x_.data() + b * in_plane, h, w, ho, wo, col.data() + b * how, n);
      for (int64_t c = 0; c < cout_; ++c) {
        std::memcpy(dymat.data() + c * n + b * how, dy.data() + (b * cout_ + c) * how,
                    sizeof(T) * static_cast<size_t>(how));
      }
    }
    gemm(false, true, cout_, k, n, T(1), dymat.data(), n, col.data(), n, T(1),
         dweight.data(), k);
    if (has_bias_) {
      for (int64_t c = 0; c < cout_; ++c) {
        T acc = T(0);
        const T* row = dymat.data() + c * n;
        for (int64_t p = 0; p < n; ++p) acc += row[p];
        dbias[c] += acc;
      }
    }
    std::vector<T>& dcol = col;  // reuse buffer
    gemm(true, false, k, n, cout_, T(1), weight.data(), k, dymat.data(), n, T(0),
         dcol.data(), n);
#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < batch; ++b) {
      col2im(dcol.data() + b * how, h, w, ho, wo, dx.data() + b * in_plane, n);
    }
  } else if (groups_ == cin_ && cin_ == cout_) {
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < cout_; ++c) {
      T* dwp = dweight.data() + c * kh_ * kw_;
      const T* wp = weight.data() + c * kh_ * kw_;
      T dbv = T(0);
      for (int64_t b = 0; b < batch; ++b) {
        const T* xp = x_.data() + (b * cin_ + c) * h * w;
        const T* dyp = dy.data() + (b * cout_ + c) * how;
        T* dxp = dx.data() + (b * cin_ + c) * h * w;
        for (int64_t oh = 0; oh < ho; ++oh) {
          for (int64_t ow = 0; ow < wo; ++ow) {
            const T g = dyp[oh * wo + ow];
            dbv += g;
            for (int64_t i = 0; i < kh_; ++i) {
              const int64_t ih = oh * sh_ + i - ph_;
              if (ih < 0 || ih >= h) continue;
              for (int64_t j = 0; j < kw_; ++j) {
                const int64_t iw = ow * sw_ + j - pw_;
                if (iw < 0 || iw >= w) continue;
                dwp[i * kw_ + j] += g * xp[ih * w + iw];
                dxp[ih * w + iw] += g * wp[i * kw_ + j];
              }
            }
          }
        }
      }
      if (has_bias_) dbias[c] += dbv;
    }
  } else {
    const int64_t cing = cin_ / groups_, coutg = cout_ / groups_;
    const int64_t k = cing * kh_ * kw_;
    std::vector<T> col(static_cast<size_t>(k * how));
    std::vector<T> dcol(static_cast<size_t>(k * how));
    Conv2d<T> sub(*this);
    sub.cin_ = cing;
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t g = 0; g < groups_; ++g) {
        const T* xg = x_.data() + (b * cin_ + g * cing) * h * w;
        const T* dyg = dy.data() + (b * cout_ + g * coutg) * how;
        sub.im2col(xg, h, w, ho, wo, col.data(), how);
        gemm(false, true, coutg, k, how, T(1), dyg, how, col.data(), how, T(1),
             dweight.data() + g * coutg * k, k);
        gemm(true, false, k, how, coutg, T(1), weight.data() + g * coutg * k, k, dyg, how,
             T(0), dcol.data(), how);
        sub.col2im(dcol.data(), h, w, ho, wo, dx.data() + (b * cin_ + g * cing) * h * w, how);
        if (has_bias_) {
          for (int64_t c = 0; c < coutg; ++c) {
            T acc = T(0);
            for (int64_t p = 0; p < how; ++p) acc += dyg[c * how + p];
            dbias[g * coutg + c] += acc;
          }
        }
      }
    }
  }
  return dx;
}

template <typename T>
void Conv2d<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".weight", &weight, &dweight});
  if (has_bias_) out.push_back({prefix + ".bias", &bias, &dbias});
}

template <typename T>
void Conv2d<T>::describe(ShapeCursor& cur, complexity::NetworkDescription& desc) const {
  int64_t ho, wo;
  out_dims(cur.h, cur.w, ho, wo);
  desc.layers.push_back(complexity::LayerShape::make_conv(name, cin_, cout_, kh_, kw_,
                                                          groups_, ho, wo, has_bias_));
  cur.channels = cout_;
  cur.h = ho;
  cur.w = wo;
}

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int64_t channels, double eps, double momentum)
    : channels_(channels), eps_(eps), momentum_(momentum) {
  gamma = Tensor<T>::full({channels}, T(1));
  beta = Tensor<T>({channels});
  dgamma = Tensor<T>({channels});
  dbeta = Tensor<T>({channels});
  running_mean = Tensor<T>({channels});
  running_var = Tensor<T>::full({channels}, T(1));
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, bool training) {
  check_4d(x, channels_, "batchnorm");
  const int64_t batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int64_t plane = h * w;
  const int64_t n = batch * plane;
  Tensor<T> y(x.shape());
  if (!training) {
#pragma omp parallel for schedule(static)
    for (int64_t c = 0; c < channels_; ++c) {
      const T scale = gamma[c] / std::sqrt(running_var[c] + static_cast<T>(eps_));
      const T shift = beta[c] - running_mean[c] * scale;
      for (int64_t b = 0; b < batch; ++b) {
        const T* xp = x.data() + (b * channels_ + c) * plane;
        T* yp = y.data() + (b * channels_ + c) * plane;
        for (int64_t p = 0; p < plane; ++p) yp[p] = xp[p] * scale + shift;
      }
    }
    return y;
  }

  xhat_ = Tensor<T>(x.shape());
  invstd_.assign(static_cast<size_t>(channels_), T(0));
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < channels_; ++c) {
    double mean = 0.0;
    for (int64_t b = 0; b < batch; ++b) {
      const T* xp = x.data() + (b * channels_ + c) * plane;
      for (int64_t p = 0; p < plane; ++p) mean += static_cast<double>(xp[p]);
    }
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t b = 0; b < batch; ++b) {
      const T* xp = x.data() + (b * channels_ + c) * plane;
      for (int64_t p = 0; p < plane; ++p) {
        const double d = static_cast<double>(xp[p]) - mean;
        var += d * d;
      }
    }
    var /= static_cast<double>(n);
    const double istd = 1.0 / std::sqrt(var + eps_);
    invstd_[static_cast<size_t>(c)] = static_cast<T>(istd);
    for (int64_t b = 0; b < batch; ++b) {
      const T* xp = x.data() + (b * channels_ + c) * plane;
      T* xh = xhat_.data() + (b * channels_ + c) * plane;
      T* yp = y.data() + (b * channels_ + c) * plane;
      for (int64_t p = 0; p < plane; ++p) {
        const T v = static_cast<T>((static_cast<double>(xp[p]) - mean) * istd);
        xh[p] = v;
        yp[p] = gamma[c] * v + beta[c];
      }
    }
    const double unbiased = n > 1 ? var * static_cast<double>(n) / static_cast<double>(n - 1)
                                  : var;
    running_mean[c] =
        static_cast<T>((1.0 - momentum_) * static_cast<double>(running_mean[c]) +
                       momentum_ * mean);
    running_var[c] = static_cast<T>((1.0 - momentum_) * static_cast<double>(running_var[c]) +
                                    momentum_ * unbiased);
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& dy) {
  if (xhat_.empty()) throw ShapeError("batchnorm: backward before training forward");
  const int64_t batch = dy.dim(0), h = dy.dim(2), w = dy.dim(3);
  const int64_t plane = h * w;
  const int64_t n = batch * plane;
  Tensor<T> dx(dy.shape());
#pragma omp parallel for schedule(static)
  for (int64_t c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int64_t b = 0; b < batch; ++b) {
      const T* dyp = dy.data() + (b * channels_ + c) * plane;
      const T* xh = xhat_.data() + (b * channels_ + c) * plane;
      for (int64_t p = 0; p < plane; ++p) {
        sum_dy += static_cast<double>(dyp[p]);
        sum_dy_xhat += static_cast<double>(dyp[p]) * static_cast<double>(xh[p]);
      }
    }
    dbeta[c] += static_cast<T>(sum_dy);
    dgamma[c] += static_cast<T>(sum_dy_xhat);
    const double scale = static_cast<double>(gamma[c]) *
                         static_cast<double>(invstd_[static_cast<size_t>(c)]) /
                         static_cast<double>(n);
    for (int64_t b = 0; b < batch; ++b) {
      const T* dyp = dy.data() + (b * channels_ + c) * plane;
      const T* xh = xhat_.data() + (b * channels_ + c) * plane;
      T* dxp = dx.data() + (b * channels_ + c) * plane;
      for (int64_t p = 0; p < plane; ++p) {
        dxp[p] = static_cast<T>(scale * (static_cast<double>(n) * static_cast<double>(dyp[p]) -
                                         sum_dy - static_cast<double>(xh[p]) * sum_dy_xhat));
      }
    }
  }
  return dx;
}

template <typename T>
void BatchNorm2d<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".gamma", &gamma, &dgamma});
  out.push_back({prefix + ".beta", &beta, &dbeta});
}

template <typename T>
void BatchNorm2d<T>::describe(ShapeCursor& cur, complexity::NetworkDescription& desc) const {
  desc.layers.push_back(complexity::LayerShape::make_norm(name, channels_));
}

// ---------------------------------------------------------------------------
// Activation
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> Activation<T>::forward(const Tensor<T>& x, bool training) {
  Tensor<T> y(x.shape());
  const int64_t n = x.numel();
  if (kind_ == Act::relu) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  } else {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
      const T v = x[i];
      T r = v + T(3);
      r = r < T(0) ? T(0) : (r > T(6) ? T(6) : r);
      y[i] = v * r / T(6);
    }
  }
  if (training) x_ = x;
  return y;
}

template <typename T>
Tensor<T> Activation<T>::backward(const Tensor<T>& dy) {
  if (x_.empty()) throw ShapeError("activation: backward before forward");
  Tensor<T> dx(dy.shape());
  const int64_t n = dy.numel();
  if (kind_ == Act::relu) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) dx[i] = x_[i] > T(0) ? dy[i] : T(0);
  } else {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) {
      const T v = x_[i];
      T g;
      if (v <= T(-3)) {
        g = T(0);
      } else if (v >= T(3)) {
        g = T(1);
      } else {
        g = (T(2) * v + T(3)) / T(6);
      }
      dx[i] = dy[i] * g;
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// SqueezeExcite
// ---------------------------------------------------------------------------

template <typename T>
SqueezeExcite<T>::SqueezeExcite(SEMode mode, int64_t channels, int64_t gate_dim,
                                int64_t squeeze_dim, std::mt19937& rng)
    : mode_(mode), channels_(channels), gate_dim_(gate_dim), squeeze_dim_(squeeze_dim) {
  if (mode == SEMode::none) throw ConfigError("se: mode none has no layer");
  w1 = Tensor<T>({squeeze_dim, gate_dim});
  b1 = Tensor<T>({squeeze_dim});
  w2 = Tensor<T>({gate_dim, squeeze_dim});
  b2 = Tensor<T>({gate_dim});
  dw1 = Tensor<T>(w1.shape());
  db1 = Tensor<T>(b1.shape());
  dw2 = Tensor<T>(w2.shape());
  db2 = Tensor<T>(b2.shape());
  fill_normal(w1, std::sqrt(2.0 / static_cast<double>(gate_dim)), rng);
  fill_normal(w2, std::sqrt(2.0 / static_cast<double>(squeeze_dim)), rng);
}

template <typename T>
Tensor<T> SqueezeExcite<T>::forward(const Tensor<T>& x, bool training) {
  check_4d(x, channels_, "se");
  const int64_t batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  const bool channel_mode = mode_ == SEMode::channel;
  if (!channel_mode && h != gate_dim_) {
    throw ShapeError("se: frequency extent " + std::to_string(h) + " != gate size " +
                     std::to_string(gate_dim_));
  }

  // pooled statistics s: [B, D]
  Tensor<T> s({batch, gate_dim_});
  if (channel_mode) {
    const int64_t plane = h * w;
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t c = 0; c < channels_; ++c) {
        const T* xp = x.data() + (b * channels_ + c) * plane;
        double acc = 0.0;
        for (int64_t p = 0; p < plane; ++p) acc += static_cast<double>(xp[p]);
        s.at(b, c) = static_cast<T>(acc / static_cast<double>(plane));
      }
    }
  } else {
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t f = 0; f < h; ++f) {
        double acc = 0.0;
        for (int64_t c = 0; c < channels_; ++c) {
          const T* xp = x.data() + ((b * channels_ + c) * h + f) * w;
          for (int64_t t = 0; t < w; ++t) acc += static_cast<double>(xp[t]);
        }
        s.at(b, f) = static_cast<T>(acc / static_cast<double>(channels_ * w));
      }
    }
  }

  Tensor<T> hmid({batch, squeeze_dim_});
  gemm(false, true, batch, squeeze_dim_, gate_dim_, T(1), s.data(), gate_dim_, w1.data(),
       gate_dim_, T(0), hmid.data(), squeeze_dim_);
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t j = 0; j < squeeze_dim_; ++j) {
      T v = hmid.at(b, j) + b1[j];
      hmid.at(b, j) = v > T(0) ? v : T(0);
    }
  }
  Tensor<T> g({batch, gate_dim_});
  gemm(false, true, batch, gate_dim_, squeeze_dim_, T(1), hmid.data(), squeeze_dim_,
       w2.data(), squeeze_dim_, T(0), g.data(), gate_dim_);
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t d = 0; d < gate_dim_; ++d) {
      g.at(b, d) = sigmoid_scalar(g.at(b, d) + b2[d]);
    }
  }

  Tensor<T> y(x.shape());
  const int64_t plane = h * w;
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t c = 0; c < channels_; ++c) {
      const T* xp = x.data() + (b * channels_ + c) * plane;
      T* yp = y.data() + (b * channels_ + c) * plane;
      if (channel_mode) {
        const T gv = g.at(b, c);
        for (int64_t p = 0; p < plane; ++p) yp[p] = xp[p] * gv;
      } else {
        for (int64_t f = 0; f < h; ++f) {
          const T gv = g.at(b, f);
          for (int64_t t = 0; t < w; ++t) yp[f * w + t] = xp[f * w + t] * gv;
        }
      }
    }
  }
  if (training) {
    x_ = x;
    s_ = std::move(s);
    h_ = std::move(hmid);
    g_ = std::move(g);
  }
  return y;
}

template <typename T>
Tensor<T> SqueezeExcite<T>::backward(const Tensor<T>& dy) {
  if (x_.empty()) throw ShapeError("se: backward before forward");
  const int64_t batch = x_.dim(0), h = x_.dim(2), w = x_.dim(3);
  const int64_t plane = h * w;
  const bool channel_mode = mode_ == SEMode::channel;

  // gate gradient dg: [B, D] and the direct input term dx = dy * g
  Tensor<T> dg({batch, gate_dim_});
  Tensor<T> dx(x_.shape());
#pragma omp parallel for schedule(static)
  for (int64_t b = 0; b < batch; ++b) {
    if (channel_mode) {
      for (int64_t c = 0; c < channels_; ++c) {
        const T* dyp = dy.data() + (b * channels_ + c) * plane;
        const T* xp = x_.data() + (b * channels_ + c) * plane;
        T* dxp = dx.data() + (b * channels_ + c) * plane;
        const T gv = g_.at(b, c);
        double acc = 0.0;
        for (int64_t p = 0; p < plane; ++p) {
          acc += static_cast<double>(dyp[p]) * static_cast<double>(xp[p]);
          dxp[p] = dyp[p] * gv;
        }
        dg.at(b, c) = static_cast<T>(acc);
      }
    } else {
      for (int64_t f = 0; f < h; ++f) dg.at(b, f) = T(0);
      for (int64_t c = 0; c < channels_; ++c) {
        const T* dyp = dy.data() + (b * channels_ + c) * plane;
        const T* xp = x_.data() + (b * channels_ + c) * plane;
        T* dxp = dx.data() + (b * channels_ + c) * plane;
        for (int64_t f = 0; f < h; ++f) {
          const T gv = g_.at(b, f);
          double acc = 0.0;
          for (int64_t t = 0; t < w; ++t) {
            acc += static_cast<double>(dyp[f * w + t]) * static_cast<double>(xp[f * w + t]);
            dxp[f * w + t] = dyp[f * w + t] * gv;
          }
          dg.at(b, f) += static_cast<T>(acc);
        }
      }
    }
  }

  // through the sigmoid: dz2 = dg * g * (1 - g)
  Tensor<T> dz2({batch, gate_dim_});
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t d = 0; d < gate_dim_; ++d) {
      const T gv = g_.at(b, d);
      dz2.at(b, d) = dg.at(b, d) * gv * (T(1) - gv);
    }
  }
  gemm(true, false, gate_dim_, squeeze_dim_, batch, T(1), dz2.data(), gate_dim_, h_.data(),
       squeeze_dim_, T(1), dw2.data(), squeeze_dim_);
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t d = 0; d < gate_dim_; ++d) db2[d] += dz2.at(b, d);
  }
  Tensor<T> dh({batch, squeeze_dim_});
  gemm(false, false, batch, squeeze_dim_, gate_dim_, T(1), dz2.data(), gate_dim_, w2.data(),
       squeeze_dim_, T(0), dh.data(), squeeze_dim_);
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t j = 0; j < squeeze_dim_; ++j) {
      if (h_.at(b, j) <= T(0)) dh.at(b, j) = T(0);
    }
  }
  gemm(true, false, squeeze_dim_, gate_dim_, batch, T(1), dh.data(), squeeze_dim_, s_.data(),
       gate_dim_, T(1), dw1.data(), gate_dim_);
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t j = 0; j < squeeze_dim_; ++j) db1[j] += dh.at(b, j);
  }
  Tensor<T> ds({batch, gate_dim_});
  gemm(false, false, batch, gate_dim_, squeeze_dim_, T(1), dh.data(), squeeze_dim_, w1.data(),
       gate_dim_, T(0), ds.data(), gate_dim_);

  // mean-pool backward into dx
  if (channel_mode) {
    const double inv = 1.0 / static_cast<double>(plane);
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t c = 0; c < channels_; ++c) {
        const T add = static_cast<T>(static_cast<double>(ds.at(b, c)) * inv);
        T* dxp = dx.data() + (b * channels_ + c) * plane;
        for (int64_t p = 0; p < plane; ++p) dxp[p] += add;
      }
    }
  } else {
    const double inv = 1.0 / static_cast<double>(channels_ * w);
#pragma omp parallel for collapse(2) schedule(static)
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t c = 0; c < channels_; ++c) {
        T* dxp = dx.data() + (b * channels_ + c) * plane;
        for (int64_t f = 0; f < h; ++f) {
          const T add = static_cast<T>(static_cast<double>(ds.at(b, f)) * inv);
          for (int64_t t = 0; t < w; ++t) dxp[f * w + t] += add;
        }
      }
    }
  }
  return dx;
}

template <typename T>
void SqueezeExcite<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".squeeze.weight", &w1, &dw1});
  out.push_back({prefix + ".squeeze.bias", &b1, &db1});
  out.push_back({prefix + ".excite.weight", &w2, &dw2});
  out.push_back({prefix + ".excite.bias", &b2, &db2});
}

template <typename T>
void SqueezeExcite<T>::describe(ShapeCursor& cur, complexity::NetworkDescription& desc) const {
  desc.layers.push_back(
      complexity::LayerShape::make_linear(name + ".squeeze", gate_dim_, squeeze_dim_, true,
                                          /*branch=*/true));
  desc.layers.push_back(
      complexity::LayerShape::make_linear(name + ".excite", squeeze_dim_, gate_dim_, true,
                                          /*branch=*/true));
}

// ---------------------------------------------------------------------------
// Dropout / GlobalAvgPool / Linear
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> Dropout<T>::forward(const Tensor<T>& x, bool training) {
  if (!training || p_ <= 0.0) {
    mask_ = Tensor<T>();
    return x;
  }
  const double keep = 1.0 - p_;
  const T scale = static_cast<T>(1.0 / keep);
  mask_ = Tensor<T>(x.shape());
  Tensor<T> y(x.shape());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int64_t i = 0; i < x.numel(); ++i) {
    const T m = u(*rng_) < keep ? scale : T(0);
    mask_[i] = m;
    y[i] = x[i] * m;
  }
  return y;
}

template <typename T>
Tensor<T> Dropout<T>::backward(const Tensor<T>& dy) {
  if (mask_.empty()) return dy;  // eval-mode or p == 0 passthrough
  Tensor<T> dx(dy.shape());
  for (int64_t i = 0; i < dy.numel(); ++i) dx[i] = dy[i] * mask_[i];
  return dx;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x, bool training) {
  check_4d(x, 0, "global_pool");
  const int64_t batch = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  in_shape_ = x.shape();
  Tensor<T> y({batch, c});
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* xp = x.data() + (b * c + ch) * plane;
      double acc = 0.0;
      for (int64_t p = 0; p < plane; ++p) acc += static_cast<double>(xp[p]);
      y.at(b, ch) = static_cast<T>(acc / static_cast<double>(plane));
    }
  }
  return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& dy) {
  if (in_shape_.empty()) throw ShapeError("global_pool: backward before forward");
  Tensor<T> dx(in_shape_);
  const int64_t batch = in_shape_[0], c = in_shape_[1], plane = in_shape_[2] * in_shape_[3];
  const double inv = 1.0 / static_cast<double>(plane);
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const T v = static_cast<T>(static_cast<double>(dy.at(b, ch)) * inv);
      T* dxp = dx.data() + (b * c + ch) * plane;
      for (int64_t p = 0; p < plane; ++p) dxp[p] = v;
    }
  }
  return dx;
}

template <typename T>
Linear<T>::Linear(int64_t din, int64_t dout, std::mt19937& rng, double init_std)
    : din_(din), dout_(dout) {
  weight = Tensor<T>({dout, din});
  bias = Tensor<T>({dout});
  dweight = Tensor<T>(weight.shape());
  dbias = Tensor<T>(bias.shape());
  fill_normal(weight, init_std, rng);
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, bool training) {
  if (x.ndim() != 2 || x.dim(1) != din_) throw ShapeError("linear '" + name + "': bad input");
  const int64_t batch = x.dim(0);
  Tensor<T> y({batch, dout_});
  gemm(false, true, batch, dout_, din_, T(1), x.data(), din_, weight.data(), din_, T(0),
       y.data(), dout_);
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t j = 0; j < dout_; ++j) y.at(b, j) += bias[j];
  }
  if (training) x_ = x;
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& dy) {
  if (x_.empty()) throw ShapeError("linear '" + name + "': backward before forward");
  const int64_t batch = x_.dim(0);
  gemm(true, false, dout_, din_, batch, T(1), dy.data(), dout_, x_.data(), din_, T(1),
       dweight.data(), din_);
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t j = 0; j < dout_; ++j) dbias[j] += dy.at(b, j);
  }
  Tensor<T> dx({batch, din_});
  gemm(false, false, batch, din_, dout_, T(1), dy.data(), dout_, weight.data(), din_, T(0),
       dx.data(), din_);
  return dx;
}

template <typename T>
void Linear<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + ".weight", &weight, &dweight});
  out.push_back({prefix + ".bias", &bias, &dbias});
}

template <typename T>
void Linear<T>::describe(ShapeCursor& cur, complexity::NetworkDescription& desc) const {
  desc.layers.push_back(complexity::LayerShape::make_linear(name, din_, dout_, true));
  cur.channels = dout_;
}

// ---------------------------------------------------------------------------
// ConvBnAct / InvertedResidual
// ---------------------------------------------------------------------------

template <typename T>
ConvBnAct<T>::ConvBnAct(std::string name, int64_t cin, int64_t cout, int64_t k,
                        int64_t stride, int64_t groups, Act act, std::mt19937& rng)
    : name_(std::move(name)),
      conv_(cin, cout, k, k, stride, stride, (k - 1) / 2, (k - 1) / 2, groups, false, rng),
      bn_(cout),
      act_(act) {
  conv_.name = name_ + ".conv";
  bn_.name = name_ + ".bn";
}

template <typename T>
Tensor<T> ConvBnAct<T>::forward(const Tensor<T>& x, bool training) {
  return act_.forward(bn_.forward(conv_.forward(x, training), training), training);
}

template <typename T>
Tensor<T> ConvBnAct<T>::backward(const Tensor<T>& dy) {
  return conv_.backward(bn_.backward(act_.backward(dy)));
}

template <typename T>
void ConvBnAct<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  conv_.collect_params(prefix + ".conv", out);
  bn_.collect_params(prefix + ".bn", out);
}

template <typename T>
void ConvBnAct<T>::describe(ShapeCursor& cur, complexity::NetworkDescription& desc) const {
  conv_.describe(cur, desc);
  bn_.describe(cur, desc);
}

void BlockSpec::validate() const {
  if (kernel != 3 && kernel != 5) throw ConfigError("block: kernel must be 3 or 5");
  if (stride != 1 && stride != 2) throw ConfigError("block: stride must be 1 or 2");
  if (expansion_channels < out_channels) {
    throw ConfigError("block: expansion_channels must be >= out_channels");
  }
  if (out_channels < 1) throw ConfigError("block: out_channels must be >= 1");
}

template <typename T>
InvertedResidual<T>::InvertedResidual(std::string name, int64_t cin, const BlockSpec& spec,
                                      SEMode se_mode, int64_t se_squeeze,
                                      int64_t freq_extent, std::mt19937& rng)
    : name_(std::move(name)),
      cin_(cin),
      cexp_(spec.expansion_channels),
      cout_(spec.out_channels),
      residual_(spec.stride == 1 && cin == spec.out_channels),
      depthwise_(cexp_, cexp_, spec.kernel, spec.kernel, spec.stride, spec.stride,
                 (spec.kernel - 1) / 2, (spec.kernel - 1) / 2, cexp_, false, rng),
      dw_bn_(cexp_),
      dw_act_(spec.activation),
      project_(cexp_, cout_, 1, 1, 1, 1, 0, 0, 1, false, rng),
      proj_bn_(cout_) {
  spec.validate();
  if (cexp_ != cin_) {
    expand_ = std::make_unique<ConvBnAct<T>>(name_ + ".expand", cin_, cexp_, 1, 1, 1,
                                             spec.activation, rng);
  }
  depthwise_.name = name_ + ".depthwise.conv";
  dw_bn_.name = name_ + ".depthwise.bn";
  project_.name = name_ + ".project.conv";
  proj_bn_.name = name_ + ".project.bn";
  if (spec.use_se && se_mode != SEMode::none) {
    const int64_t gate_dim = se_mode == SEMode::channel ? cexp_ : freq_extent;
    se_ = std::make_unique<SqueezeExcite<T>>(se_mode, cexp_, gate_dim, se_squeeze, rng);
    se_->name = name_ + ".se";
  }
}

template <typename T>
Tensor<T> InvertedResidual<T>::forward(const Tensor<T>& x, bool training) {
  Tensor<T> t = expand_ ? expand_->forward(x, training) : x;
  t = dw_act_.forward(dw_bn_.forward(depthwise_.forward(t, training), training), training);
  if (se_) t = se_->forward(t, training);
  t = proj_bn_.forward(project_.forward(t, training), training);
  if (residual_) {
    if (!t.same_shape(x)) throw ShapeError("block '" + name_ + "': residual shape mismatch");
    const int64_t n = t.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) t[i] += x[i];
  }
  return t;
}

template <typename T>
Tensor<T> InvertedResidual<T>::backward(const Tensor<T>& dy) {
  Tensor<T> d = proj_bn_.backward(dy);
  d = project_.backward(d);
  if (se_) d = se_->backward(d);
  d = depthwise_.backward(dw_bn_.backward(dw_act_.backward(d)));
  if (expand_) d = expand_->backward(d);
  if (residual_) {
    const int64_t n = d.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i) d[i] += dy[i];
  }
  return d;
}

template <typename T>
void InvertedResidual<T>::collect_params(const std::string& prefix,
                                         std::vector<ParamRef<T>>& out) {
  if (expand_) expand_->collect_params(prefix + ".expand", out);
  depthwise_.collect_params(prefix + ".depthwise.conv", out);
  dw_bn_.collect_params(prefix + ".depthwise.bn", out);
  if (se_) se_->collect_params(prefix + ".se", out);
  project_.collect_params(prefix + ".project.conv", out);
  proj_bn_.collect_params(prefix + ".project.bn", out);
}

template <typename T>
void InvertedResidual<T>::describe(ShapeCursor& cur,
                                   complexity::NetworkDescription& desc) const {
  if (expand_) expand_->describe(cur, desc);
  depthwise_.describe(cur, desc);
  dw_bn_.describe(cur, desc);
  if (se_) se_->describe(cur, desc);
  project_.describe(cur, desc);
  proj_bn_.describe(cur, desc);
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class Activation<float>;
template class Activation<double>;
template class SqueezeExcite<float>;
template class SqueezeExcite<double>;
template class Dropout<float>;
template class Dropout<double>;
template class GlobalAvgPool<float>;
template class GlobalAvgPool<double>;
template class Linear<float>;
template class Linear<double>;
template class ConvBnAct<float>;
template class ConvBnAct<double>;
template class InvertedResidual<float>;
template class InvertedResidual<double>;

}  // namespace audiotag::nn
