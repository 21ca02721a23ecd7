#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "audiotag/nn/layers.hpp"

namespace audiotag::nn {

enum class HeadKind { mlp, fully_conv, attn_2, attn_4 };

struct NetworkConfig {
  double alpha = 1.0;
  SEMode se_mode = SEMode::channel;
  HeadKind head = HeadKind::mlp;
  int n_classes = 527;
  int n_mels = 128;
  int se_reduction = 4;
  double dropout = 0.2;

  void validate() const;
};

SEMode se_mode_from_string(const std::string& s);
HeadKind head_from_string(const std::string& s);
std::string to_string(SEMode m);
std::string to_string(HeadKind h);

// round(base * alpha) to the nearest multiple of 8 (half away from zero),
// with a floor of 8.
int64_t width_scale(int64_t base_channels, double alpha);

// Largest multiple of 8 not losing more than 10% of v, canonical squeeze
// width rule for channel SE bottlenecks.
int64_t make_divisible8(int64_t v);

// Global mean pool -> width-scaled hidden linear -> hard-swish -> dropout ->
// linear to n_classes.
template <typename T>
class MlpHead : public Layer<T> {
 public:
  MlpHead(int64_t cin, int64_t hidden, int64_t n_classes, double dropout,
          std::mt19937& rng);
  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  void describe(ShapeCursor& cur, complexity::NetworkDescription& desc) const override;

 private:
  GlobalAvgPool<T> pool_;
  Linear<T> fc1_;
  Activation<T> act_;
  Dropout<T> drop_;
  Linear<T> fc2_;
};

// 1x1 convolution to n_classes followed by a global mean pool.
template <typename T>
class FullyConvHead : public Layer<T> {
 public:
  FullyConvHead(int64_t cin, int64_t n_classes, std::mt19937& rng);
  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  void describe(ShapeCursor& cur, complexity::NetworkDescription& desc) const override;

 private:
  Conv2d<T> conv_;
  GlobalAvgPool<T> pool_;
};

// Multihead attention pooling over time: the feature map is mean-pooled over
// frequency into a sequence, each head computes per-class attention weights
// (softmax over time) and per-class scores, and head outputs are averaged.
template <typename T>
class AttentionHead : public Layer<T> {
 public:
  AttentionHead(int64_t cin, int64_t n_heads, int64_t n_classes, std::mt19937& rng);
  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  void describe(ShapeCursor& cur, complexity::NetworkDescription& desc) const override;

 private:
  int64_t cin_, n_heads_, n_classes_;
  std::vector<std::unique_ptr<Linear<T>>> att_, cla_;  // per head, [K, C] each
  Tensor<T> x_;                                        // cached input [B,C,F,T]
  Tensor<T> u_;                                        // pooled sequence [B,C,T]
  std::vector<Tensor<T>> alpha_, score_;               // per head [B,K,T]
};

// Width-scalable inverted-residual classifier with configurable SE mode and
// classification head. Input [B, 1, n_mels, T], output [B, n_classes] logits.
template <typename T>
class Network {
 public:
  Network(const NetworkConfig& cfg, std::mt19937& rng);
  // Custom stage table (used by the small test networks).
  Network(const NetworkConfig& cfg, const std::vector<BlockSpec>& table, int64_t stem_base,
          int64_t last_base, std::mt19937& rng);

  Tensor<T> forward(const Tensor<T>& batch, bool training);
  void backward(const Tensor<T>& dlogits);

  std::vector<ParamRef<T>> parameters();
  int64_t count_parameters();
  void zero_grads();

  complexity::NetworkDescription describe(int64_t frames) const;

  const NetworkConfig& config() const { return cfg_; }
  const std::vector<BlockSpec>& block_table() const { return scaled_table_; }

 private:
  NetworkConfig cfg_;
  std::vector<BlockSpec> scaled_table_;
  std::vector<std::unique_ptr<Layer<T>>> trunk_;
  std::unique_ptr<Layer<T>> head_;
  std::vector<std::string> trunk_names_;

  void build(const std::vector<BlockSpec>& base_table, int64_t stem_base, int64_t last_base,
             std::mt19937& rng);
};

// The canonical 15-block stage table realized by build_network.
const std::vector<BlockSpec>& large_stage_table();

template <typename T>
Network<T> build_network(const NetworkConfig& cfg, std::mt19937& rng);

using NetworkF = Network<float>;

}  // namespace audiotag::nn
