#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "audiotag/complexity.hpp"
#include "audiotag/tensor.hpp"

namespace audiotag::nn {

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

// Feature-map cursor threaded through describe(): channels and the spatial
// extents a layer would see at a given input resolution.
struct ShapeCursor {
  int64_t channels = 0;
  int64_t h = 0;
  int64_t w = 0;
};

// Training-capable layer over [B, C, H, W] activations (heads emit [B, K]).
// forward(training=true) caches what backward needs; backward returns the
// gradient w.r.t. the layer input and accumulates parameter gradients.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, bool training) = 0;
  virtual Tensor<T> backward(const Tensor<T>& dy) = 0;
  virtual void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {}
  virtual void describe(ShapeCursor& cur, complexity::NetworkDescription& desc) const {}
};

enum class Act { relu, hard_swish };

template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(int64_t cin, int64_t cout, int64_t kh, int64_t kw, int64_t stride_h,
         int64_t stride_w, int64_t pad_h, int64_t pad_w, int64_t groups, bool bias,
         std::mt19937& rng);

  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  void describe(ShapeCursor& cur, complexity::NetworkDescription& desc) const override;

  int64_t cin() const { return cin_; }
  int64_t cout() const { return cout_; }

  std::string name = "conv";
  Tensor<T> weight;  // [cout, cin/groups, kh, kw]
  Tensor<T> bias;    // [cout] or empty
  Tensor<T> dweight;
  Tensor<T> dbias;

 private:
  int64_t cin_, cout_, kh_, kw_, sh_, sw_, ph_, pw_, groups_;
  bool has_bias_;
  Tensor<T> x_;  // cached input

  void out_dims(int64_t h, int64_t w, int64_t& ho, int64_t& wo) const;
  void im2col(const T* x, int64_t h, int64_t w, int64_t ho, int64_t wo, T* col,
              int64_t ld) const;
  void col2im(const T* col, int64_t h, int64_t w, int64_t ho, int64_t wo, T* dx,
              int64_t ld) const;
};

template <typename T>
class BatchNorm2d : public Layer<T> {
 public:
  explicit BatchNorm2d(int64_t channels, double eps = 1e-3, double momentum = 0.01);

  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  void describe(ShapeCursor& cur, complexity::NetworkDescription& desc) const override;

  std::string name = "bn";
  Tensor<T> gamma, beta, dgamma, dbeta;
  Tensor<T> running_mean, running_var;  // buffers, not trainable

 private:
  int64_t channels_;
  double eps_, momentum_;
  Tensor<T> xhat_;
  std::vector<T> invstd_;
};

template <typename T>
class Activation : public Layer<T> {
 public:
  explicit Activation(Act kind) : kind_(kind) {}
  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& dy) override;

 private:
  Act kind_;
  Tensor<T> x_;
};

enum class SEMode { none, channel, frequency };

// Squeeze-and-Excitation over channels (gate per channel from (H,W) means) or
// over frequency bands (gate per mel row from (C,W) means; parameter count
// does not depend on the channel width).
template <typename T>
class SqueezeExcite : public Layer<T> {
 public:
  SqueezeExcite(SEMode mode, int64_t channels, int64_t gate_dim, int64_t squeeze_dim,
                std::mt19937& rng);

  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  void describe(ShapeCursor& cur, complexity::NetworkDescription& desc) const override;

  std::string name = "se";
  Tensor<T> w1, b1, w2, b2;  // squeeze [S, D] + excite [D, S]
  Tensor<T> dw1, db1, dw2, db2;

 private:
  SEMode mode_;
  int64_t channels_, gate_dim_, squeeze_dim_;
  Tensor<T> x_, s_, h_, g_;  // input, pooled stats, bottleneck, gate
};

template <typename T>
class Dropout : public Layer<T> {
 public:
  Dropout(double p, std::mt19937& rng) : p_(p), rng_(&rng) {}
  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& dy) override;

 private:
  double p_;
  std::mt19937* rng_;
  Tensor<T> mask_;
};

// Mean over (H, W): [B, C, H, W] -> [B, C].
template <typename T>
class GlobalAvgPool : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& dy) override;

 private:
  std::vector<int64_t> in_shape_;
};

template <typename T>
class Linear : public Layer<T> {
 public:
  Linear(int64_t din, int64_t dout, std::mt19937& rng, double init_std = 0.01);

  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  void describe(ShapeCursor& cur, complexity::NetworkDescription& desc) const override;

  std::string name = "linear";
  Tensor<T> weight, bias, dweight, dbias;  // weight [dout, din]

 private:
  int64_t din_, dout_;
  Tensor<T> x_;
};

// conv -> batchnorm -> activation
template <typename T>
class ConvBnAct : public Layer<T> {
 public:
  ConvBnAct(std::string name, int64_t cin, int64_t cout, int64_t k, int64_t stride,
            int64_t groups, Act act, std::mt19937& rng);

  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  void describe(ShapeCursor& cur, complexity::NetworkDescription& desc) const override;

  const std::string& name() const { return name_; }

 private:
  std::string name_;
  Conv2d<T> conv_;
  BatchNorm2d<T> bn_;
  Activation<T> act_;
};

struct BlockSpec {
  int kernel = 3;               // 3 or 5
  int expansion_channels = 0;   // width of the expanded representation
  int out_channels = 0;
  int stride = 1;               // 1 or 2, applied on both axes
  bool use_se = false;
  Act activation = Act::relu;

  void validate() const;
};

// Inverted residual: pointwise expansion, depthwise conv, optional SE,
// pointwise projection, with a skip connection when the shape is preserved.
template <typename T>
class InvertedResidual : public Layer<T> {
 public:
  InvertedResidual(std::string name, int64_t cin, const BlockSpec& spec, SEMode se_mode,
                   int64_t se_squeeze, int64_t freq_extent, std::mt19937& rng);

  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  void describe(ShapeCursor& cur, complexity::NetworkDescription& desc) const override;

  const std::string& name() const { return name_; }
  int64_t out_channels() const { return cout_; }

 private:
  std::string name_;
  int64_t cin_, cexp_, cout_;
  bool residual_;
  std::unique_ptr<ConvBnAct<T>> expand_;  // absent when cexp == cin
  Conv2d<T> depthwise_;
  BatchNorm2d<T> dw_bn_;
  Activation<T> dw_act_;
  std::unique_ptr<SqueezeExcite<T>> se_;
  Conv2d<T> project_;
  BatchNorm2d<T> proj_bn_;
};

}  // namespace audiotag::nn
