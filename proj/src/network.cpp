#include "audiotag/nn/network.hpp"

#include <cmath>

#include "audiotag/nn/gemm.hpp"

namespace audiotag::nn {

void NetworkConfig::validate() const {
  if (alpha <= 0.0) throw ConfigError("network: alpha must be positive");
  if (n_classes < 1) throw ConfigError("network: n_classes must be >= 1");
  if (n_mels < 8) {
    throw ConfigError("network: n_mels " + std::to_string(n_mels) +
                      " too small for the stride stack (minimum 8)");
  }
  if (se_reduction < 1) throw ConfigError("network: se_reduction must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("network: dropout must be in [0, 1)");
}

SEMode se_mode_from_string(const std::string& s) {
  if (s == "none") return SEMode::none;
  if (s == "channel") return SEMode::channel;
  if (s == "frequency") return SEMode::frequency;
  throw ConfigError("unknown SE mode '" + s + "' (none|channel|frequency)");
}

HeadKind head_from_string(const std::string& s) {
  if (s == "mlp") return HeadKind::mlp;
  if (s == "fully_conv") return HeadKind::fully_conv;
  if (s == "attn_2") return HeadKind::attn_2;
  if (s == "attn_4") return HeadKind::attn_4;
  throw ConfigError("unknown head '" + s + "' (mlp|fully_conv|attn_2|attn_4)");
}

std::string to_string(SEMode m) {
  switch (m) {
    case SEMode::none:
      return "none";
    case SEMode::channel:
      return "channel";
    case SEMode::frequency:
      return "frequency";
  }
  return "?";
}

std::string to_string(HeadKind h) {
  switch (h) {
    case HeadKind::mlp:
      return "mlp";
    case HeadKind::fully_conv:
      return "fully_conv";
    case HeadKind::attn_2:
      return "attn_2";
    case HeadKind::attn_4:
      return "attn_4";
  }
  return "?";
}

int64_t width_scale(int64_t base_channels, double alpha) {
  if (base_channels < 1) throw ConfigError("width_scale: base_channels must be >= 1");
  if (alpha <= 0.0) throw ConfigError("width_scale: alpha must be positive");
  const double scaled = static_cast<double>(base_channels) * alpha;
  const auto units = static_cast<int64_t>(std::floor(scaled / 8.0 + 0.5));
  return std::max<int64_t>(8, units * 8);
}

int64_t make_divisible8(int64_t v) {
  auto nv = std::max<int64_t>(8, (v + 4) / 8 * 8);
  if (static_cast<double>(nv) < 0.9 * static_cast<double>(v)) nv += 8;
  return nv;
}

const std::vector<BlockSpec>& large_stage_table() {
  // kernel, expansion, out, stride, SE, activation
  static const std::vector<BlockSpec> table = {
      {3, 16, 16, 1, false, Act::relu},       {3, 64, 24, 2, false, Act::relu},
      {3, 72, 24, 1, false, Act::relu},       {5, 72, 40, 2, true, Act::relu},
      {5, 120, 40, 1, true, Act::relu},       {5, 120, 40, 1, true, Act::relu},
      {3, 240, 80, 2, false, Act::hard_swish}, {3, 200, 80, 1, false, Act::hard_swish},
      {3, 184, 80, 1, false, Act::hard_swish}, {3, 184, 80, 1, false, Act::hard_swish},
      {3, 480, 112, 1, true, Act::hard_swish}, {3, 672, 112, 1, true, Act::hard_swish},
      {5, 672, 160, 2, true, Act::hard_swish}, {5, 960, 160, 1, true, Act::hard_swish},
      {5, 960, 160, 1, true, Act::hard_swish},
  };
  return table;
}

// ---------------------------------------------------------------------------
// Heads
// ---------------------------------------------------------------------------

template <typename T>
MlpHead<T>::MlpHead(int64_t cin, int64_t hidden, int64_t n_classes, double dropout,
                    std::mt19937& rng)
    : fc1_(cin, hidden, rng), act_(Act::hard_swish), drop_(dropout, rng),
      fc2_(hidden, n_classes, rng) {
  fc1_.name = "head.fc1";
  fc2_.name = "head.fc2";
}

template <typename T>
Tensor<T> MlpHead<T>::forward(const Tensor<T>& x, bool training) {
  Tensor<T> t = pool_.forward(x, training);
  t = fc1_.forward(t, training);
  t = act_.forward(t, training);
  t = drop_.forward(t, training);
  return fc2_.forward(t, training);
}

template <typename T>
Tensor<T> MlpHead<T>::backward(const Tensor<T>& dy) {
  Tensor<T> d = fc2_.backward(dy);
  d = drop_.backward(d);
  d = act_.backward(d);
  d = fc1_.backward(d);
  return pool_.backward(d);
}

template <typename T>
void MlpHead<T>::collect_params(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  fc1_.collect_params(prefix + ".fc1", out);
  fc2_.collect_params(prefix + ".fc2", out);
}

template <typename T>
void MlpHead<T>::describe(ShapeCursor& cur, complexity::NetworkDescription& desc) const {
  fc1_.describe(cur, desc);
  fc2_.describe(cur, desc);
}

template <typename T>
FullyConvHead<T>::FullyConvHead(int64_t cin, int64_t n_classes, std::mt19937& rng)
    : conv_(cin, n_classes, 1, 1, 1, 1, 0, 0, 1, true, rng) {
  conv_.name = "head.conv";
}

template <typename T>
Tensor<T> FullyConvHead<T>::forward(const Tensor<T>& x, bool training) {
  return pool_.forward(conv_.forward(x, training), training);
}

template <typename T>
Tensor<T> FullyConvHead<T>::backward(const Tensor<T>& dy) {
  return conv_.backward(pool_.backward(dy));
}

template <typename T>
void FullyConvHead<T>::collect_params(const std::string& prefix,
                                      std::vector<ParamRef<T>>& out) {
  conv_.collect_params(prefix + ".conv", out);
}

template <typename T>
void FullyConvHead<T>::describe(ShapeCursor& cur,
                                complexity::NetworkDescription& desc) const {
  conv_.describe(cur, desc);
}

template <typename T>
AttentionHead<T>::AttentionHead(int64_t cin, int64_t n_heads, int64_t n_classes,
                                std::mt19937& rng)
    : cin_(cin), n_heads_(n_heads), n_classes_(n_classes) {
  for (int64_t h = 0; h < n_heads; ++h) {
    att_.push_back(std::make_unique<Linear<T>>(cin, n_classes, rng));
    cla_.push_back(std::make_unique<Linear<T>>(cin, n_classes, rng));
    att_.back()->name = "head.att" + std::to_string(h);
    cla_.back()->name = "head.cla" + std::to_string(h);
  }
}

template <typename T>
Tensor<T> AttentionHead<T>::forward(const Tensor<T>& x, bool training) {
  const int64_t batch = x.dim(0), c = x.dim(1), f = x.dim(2), t = x.dim(3);
  if (c != cin_) throw ShapeError("attention head: channel mismatch");

  // pool frequency -> [B, C, T]
  Tensor<T> u({batch, c, t});
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* xp = x.data() + (b * c + ch) * f * t;
      T* up = u.data() + (b * c + ch) * t;
      for (int64_t j = 0; j < t; ++j) {
        double acc = 0.0;
        for (int64_t i = 0; i < f; ++i) acc += static_cast<double>(xp[i * t + j]);
        up[j] = static_cast<T>(acc / static_cast<double>(f));
      }
    }
  }

  Tensor<T> z({batch, n_classes_});
  if (training) {
    alpha_.assign(static_cast<size_t>(n_heads_), Tensor<T>());
    score_.assign(static_cast<size_t>(n_heads_), Tensor<T>());
  }
  for (int64_t hd = 0; hd < n_heads_; ++hd) {
    Tensor<T> a({batch, n_classes_, t});
    Tensor<T> s({batch, n_classes_, t});
    const Tensor<T>& wa = att_[static_cast<size_t>(hd)]->weight;
    const Tensor<T>& ba = att_[static_cast<size_t>(hd)]->bias;
    const Tensor<T>& wc = cla_[static_cast<size_t>(hd)]->weight;
    const Tensor<T>& bc = cla_[static_cast<size_t>(hd)]->bias;
    for (int64_t b = 0; b < batch; ++b) {
      const T* ub = u.data() + b * c * t;
      // [K, C] x [C, T]
      gemm(false, false, n_classes_, t, c, T(1), wa.data(), c, ub, t, T(0),
           a.data() + b * n_classes_ * t, t);
      gemm(false, false, n_classes_, t, c, T(1), wc.data(), c, ub, t, T(0),
           s.data() + b * n_classes_ * t, t);
      for (int64_t k = 0; k < n_classes_; ++k) {
        T* ak = a.data() + (b * n_classes_ + k) * t;
        T* sk = s.data() + (b * n_classes_ + k) * t;
        // softmax over time of the attention branch
        T mx = ak[0] + ba[k];
        for (int64_t j = 0; j < t; ++j) {
          ak[j] += ba[k];
          sk[j] += bc[k];
          mx = std::max(mx, ak[j]);
        }
        double denom = 0.0;
        for (int64_t j = 0; j < t; ++j) {
          const double e = std::exp(static_cast<double>(ak[j] - mx));
          ak[j] = static_cast<T>(e);
          denom += e;
        }
        double acc = 0.0;
        for (int64_t j = 0; j < t; ++j) {
          ak[j] = static_cast<T>(static_cast<double>(ak[j]) / denom);
          acc += static_cast<double>(ak[j]) * static_cast<double>(sk[j]);
        }
        z.at(b, k) += static_cast<T>(acc / static_cast<double>(n_heads_));
      }
    }
    if (training) {
      alpha_[static_cast<size_t>(hd)] = std::move(a);
      score_[static_cast<size_t>(hd)] = std::move(s);
    }
  }
  if (training) {
    x_ = x;
    u_ = std::move(u);
  }
  return z;
}

template <typename T>
Tensor<T> AttentionHead<T>::backward(const Tensor<T>& dy) {
  if (x_.empty()) throw ShapeError("attention head: backward before forward");
  const int64_t batch = x_.dim(0), c = x_.dim(1), f = x_.dim(2), t = x_.dim(3);
  Tensor<T> du({batch, c, t});
  const double inv_heads = 1.0 / static_cast<double>(n_heads_);

  for (int64_t hd = 0; hd < n_heads_; ++hd) {
    Linear<T>& la = *att_[static_cast<size_t>(hd)];
    Linear<T>& lc = *cla_[static_cast<size_t>(hd)];
    const Tensor<T>& a = alpha_[static_cast<size_t>(hd)];
    const Tensor<T>& s = score_[static_cast<size_t>(hd)];
    Tensor<T> da({batch, n_classes_, t});  // gradient on attention logits
    Tensor<T> ds({batch, n_classes_, t});  // gradient on score branch
    for (int64_t b = 0; b < batch; ++b) {
      for (int64_t k = 0; k < n_classes_; ++k) {
        const T g = static_cast<T>(static_cast<double>(dy.at(b, k)) * inv_heads);
        const T* ak = a.data() + (b * n_classes_ + k) * t;
        const T* sk = s.data() + (b * n_classes_ + k) * t;
        T* dak = da.data() + (b * n_classes_ + k) * t;
        T* dsk = ds.data() + (b * n_classes_ + k) * t;
        double dot = 0.0;  // sum_j alpha_j * dalpha_j with dalpha_j = g * s_j
        for (int64_t j = 0; j < t; ++j) {
          dsk[j] = g * ak[j];
          dot += static_cast<double>(ak[j]) * static_cast<double>(g * sk[j]);
        }
        for (int64_t j = 0; j < t; ++j) {
          dak[j] = static_cast<T>(static_cast<double>(ak[j]) *
                                  (static_cast<double>(g * sk[j]) - dot));
        }
      }
    }
    // accumulate parameter grads and du
    for (int64_t b = 0; b < batch; ++b) {
      const T* ub = u_.data() + b * c * t;
      const T* dab = da.data() + b * n_classes_ * t;
      const T* dsb = ds.data() + b * n_classes_ * t;
      // dW[K, C] += dZ[K, T] x u^T[T, C]
      gemm(false, true, n_classes_, c, t, T(1), dab, t, ub, t, T(1), la.dweight.data(), c);
      gemm(false, true, n_classes_, c, t, T(1), dsb, t, ub, t, T(1), lc.dweight.data(), c);
      // du[C, T] += W^T[C, K] x dZ[K, T]
      gemm(true, false, c, t, n_classes_, T(1), la.weight.data(), c, dab, t, T(1),
           du.data() + b * c * t, t);
      gemm(true, false, c, t, n_classes_, T(1), lc.weight.data(), c, dsb, t, T(1),
           du.data() + b * c * t, t);
      for (int64_t k = 0; k < n_classes_; ++k) {
        T acc_a = T(0), acc_s = T(0);
        for (int64_t j = 0; j < t; ++j) {
          acc_a += dab[k * t + j];
          acc_s += dsb[k * t + j];
        }
        la.dbias[k] += acc_a;
        lc.dbias[k] += acc_s;
      }
    }
  }

  // frequency mean-pool backward
  Tensor<T> dx(x_.shape());
  const double inv_f = 1.0 / static_cast<double>(f);
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const T* dup = du.data() + (b * c + ch) * t;
      T* dxp = dx.data() + (b * c + ch) * f * t;
      for (int64_t i = 0; i < f; ++i) {
        for (int64_t j = 0; j < t; ++j) {
          dxp[i * t + j] = static_cast<T>(static_cast<double>(dup[j]) * inv_f);
        }
      }
    }
  }
  return dx;
}

template <typename T>
void AttentionHead<T>::collect_params(const std::string& prefix,
                                      std::vector<ParamRef<T>>& out) {
  for (int64_t hd = 0; hd < n_heads_; ++hd) {
    att_[static_cast<size_t>(hd)]->collect_params(prefix + ".att" + std::to_string(hd), out);
    cla_[static_cast<size_t>(hd)]->collect_params(prefix + ".cla" + std::to_string(hd), out);
  }
}

template <typename T>
void AttentionHead<T>::describe(ShapeCursor& cur,
                                complexity::NetworkDescription& desc) const {
  // Each head applies its two projections at every time step: conv records
  // with a 1 x T output grid count both MACs and parameters exactly.
  for (int64_t hd = 0; hd < n_heads_; ++hd) {
    desc.layers.push_back(complexity::LayerShape::make_conv(
        "head.att" + std::to_string(hd), cin_, n_classes_, 1, 1, 1, 1, cur.w, true,
        /*branch=*/true));
    desc.layers.push_back(complexity::LayerShape::make_conv(
        "head.cla" + std::to_string(hd), cin_, n_classes_, 1, 1, 1, 1, cur.w, true,
        /*branch=*/true));
  }
  cur.channels = n_classes_;
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

template <typename T>
Network<T>::Network(const NetworkConfig& cfg, std::mt19937& rng) : cfg_(cfg) {
  cfg_.validate();
  build(large_stage_table(), 16, 960, rng);
}

template <typename T>
Network<T>::Network(const NetworkConfig& cfg, const std::vector<BlockSpec>& table,
                    int64_t stem_base, int64_t last_base, std::mt19937& rng)
    : cfg_(cfg) {
  cfg_.validate();
  build(table, stem_base, last_base, rng);
}

template <typename T>
void Network<T>::build(const std::vector<BlockSpec>& base_table, int64_t stem_base,
                       int64_t last_base, std::mt19937& rng) {
  const double alpha = cfg_.alpha;
  int64_t channels = width_scale(stem_base, alpha);
  auto stem = std::make_unique<ConvBnAct<T>>("stem", 1, channels, 3, 2, 1, Act::hard_swish,
                                             rng);
  // frequency extent after each stride-2 stage, for frequency-SE gate sizes
  int64_t freq = (cfg_.n_mels + 2 - 3) / 2 + 1;
  trunk_.push_back(std::move(stem));
  trunk_names_.push_back("stem");

  int block_idx = 0;
  for (const BlockSpec& base : base_table) {
    BlockSpec spec = base;
    spec.expansion_channels =
        static_cast<int>(width_scale(base.expansion_channels, alpha));
    spec.out_channels = static_cast<int>(width_scale(base.out_channels, alpha));
    if (spec.expansion_channels < spec.out_channels) {
      spec.expansion_channels = spec.out_channels;
    }
    if (spec.stride == 2) freq = (freq + 2 * ((spec.kernel - 1) / 2) - spec.kernel) / 2 + 1;
    int64_t squeeze = 0;
    if (spec.use_se && cfg_.se_mode == SEMode::channel) {
      squeeze = make_divisible8(spec.expansion_channels / cfg_.se_reduction);
    } else if (spec.use_se && cfg_.se_mode == SEMode::frequency) {
      squeeze = std::max<int64_t>(1, freq / cfg_.se_reduction);
    }
    const std::string name = "block" + std::to_string(block_idx);
    trunk_.push_back(std::make_unique<InvertedResidual<T>>(name, channels, spec,
                                                           cfg_.se_mode, squeeze, freq, rng));
    trunk_names_.push_back(name);
    scaled_table_.push_back(spec);
    channels = spec.out_channels;
    ++block_idx;
  }

  const int64_t last = width_scale(last_base, alpha);
  trunk_.push_back(
      std::make_unique<ConvBnAct<T>>("last", channels, last, 1, 1, 1, Act::hard_swish, rng));
  trunk_names_.push_back("last");

  switch (cfg_.head) {
    case HeadKind::mlp:
      head_ = std::make_unique<MlpHead<T>>(last, width_scale(1280, alpha), cfg_.n_classes,
                                           cfg_.dropout, rng);
      break;
    case HeadKind::fully_conv:
      head_ = std::make_unique<FullyConvHead<T>>(last, cfg_.n_classes, rng);
      break;
    case HeadKind::attn_2:
      head_ = std::make_unique<AttentionHead<T>>(last, 2, cfg_.n_classes, rng);
      break;
    case HeadKind::attn_4:
      head_ = std::make_unique<AttentionHead<T>>(last, 4, cfg_.n_classes, rng);
      break;
  }
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& batch, bool training) {
  if (batch.ndim() != 4 || batch.dim(1) != 1) {
    throw ShapeError("network: expected [B, 1, F, T] input");
  }
  if (batch.dim(2) != cfg_.n_mels) {
    throw ShapeError("network: input has " + std::to_string(batch.dim(2)) +
                     " mel rows, config expects " + std::to_string(cfg_.n_mels));
  }
  if (batch.dim(3) < 1) throw ShapeError("network: empty time axis");
  Tensor<T> t = batch;
  for (auto& layer : trunk_) t = layer->forward(t, training);
  return head_->forward(t, training);
}

template <typename T>
void Network<T>::backward(const Tensor<T>& dlogits) {
  Tensor<T> d = head_->backward(dlogits);
  for (auto it = trunk_.rbegin(); it != trunk_.rend(); ++it) d = (*it)->backward(d);
}

template <typename T>
std::vector<ParamRef<T>> Network<T>::parameters() {
  std::vector<ParamRef<T>> out;
  for (size_t i = 0; i < trunk_.size(); ++i) {
    trunk_[i]->collect_params(trunk_names_[i], out);
  }
  head_->collect_params("head", out);
  return out;
}

template <typename T>
int64_t Network<T>::count_parameters() {
  int64_t n = 0;
  for (const ParamRef<T>& p : parameters()) n += p.value->numel();
  return n;
}

template <typename T>
void Network<T>::zero_grads() {
  for (ParamRef<T>& p : parameters()) p.grad->fill(T(0));
}

template <typename T>
complexity::NetworkDescription Network<T>::describe(int64_t frames) const {
  if (frames < 1) throw ConfigError("describe: frames must be >= 1");
  complexity::NetworkDescription desc;
  desc.input_mels = cfg_.n_mels;
  desc.input_frames = static_cast<int>(frames);
  ShapeCursor cur{1, cfg_.n_mels, frames};
  for (const auto& layer : trunk_) layer->describe(cur, desc);
  head_->describe(cur, desc);
  return desc;
}

template <typename T>
Network<T> build_network(const NetworkConfig& cfg, std::mt19937& rng) {
  return Network<T>(cfg, rng);
}

template class MlpHead<float>;
template class MlpHead<double>;
template class FullyConvHead<float>;
template class FullyConvHead<double>;
template class AttentionHead<float>;
template class AttentionHead<double>;
template class Network<float>;
template class Network<double>;
template Network<float> build_network<float>(const NetworkConfig&, std::mt19937&);
template Network<double> build_network<double>(const NetworkConfig&, std::mt19937&);

}  // namespace audiotag::nn
