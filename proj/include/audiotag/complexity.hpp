#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace audiotag::complexity {

enum class LayerKind { conv, linear, attention, norm };

// Shape record for one layer. Only the fields of the active kind are
// meaningful. `branch` marks records that hang off the trunk (SE bottlenecks,
// parallel attention-head projections); the composability check skips them.
struct LayerShape {
  LayerKind kind = LayerKind::conv;
  std::string name;
  bool branch = false;

  // conv
  int64_t cin = 0, cout = 0, kh = 0, kw = 0, groups = 1, hout = 0, wout = 0;
  bool has_bias = false;

  // linear
  int64_t din = 0, dout = 0;

  // attention
  int64_t seq_len = 0, model_dim = 0, heads = 1;

  // norm
  int64_t channels = 0;

  static LayerShape make_conv(std::string name, int64_t cin, int64_t cout, int64_t kh,
                              int64_t kw, int64_t groups, int64_t hout, int64_t wout,
                              bool has_bias, bool branch = false);
  static LayerShape make_linear(std::string name, int64_t din, int64_t dout, bool has_bias,
                                bool branch = false);
  static LayerShape make_attention(std::string name, int64_t seq_len, int64_t model_dim,
                                   int64_t heads);
  static LayerShape make_norm(std::string name, int64_t channels);
};

// Multiply-accumulates of a single forward pass through one layer.
// Biases, activations, pooling, normalization and SE gating are not counted.
int64_t macs_conv(const LayerShape& s);        // (cin/groups)*cout*kh*kw*hout*wout
int64_t macs_linear(const LayerShape& s);      // din*dout
int64_t macs_attention(const LayerShape& s);   // 4*L*d^2 + 2*L^2*d
int64_t layer_macs(const LayerShape& s);
int64_t layer_params(const LayerShape& s);

struct NetworkDescription {
  std::vector<LayerShape> layers;
  int input_mels = 0;
  int input_frames = 0;
};

struct LayerReport {
  std::string name;
  LayerKind kind = LayerKind::conv;
  int64_t macs = 0;
  int64_t params = 0;
};

struct ComplexityReport {
  std::vector<LayerReport> per_layer;
  int64_t total_macs = 0;
  int64_t total_params = 0;
  int input_mels = 0;
  int input_frames = 0;
};

// Sums per-layer MACs and parameters. Verifies that trunk records compose
// (each trunk conv consumes the channel width the previous trunk layer
// produced); a broken chain raises ShapeError.
ComplexityReport analyze(const NetworkDescription& desc);

// Human-readable per-layer table.
std::string report_table(const ComplexityReport& report);

struct FrontierPoint {
  std::string label;
  ComplexityReport report;
  double score = 0.0;
};

struct FrontierRow {
  std::string label;
  int64_t params = 0;
  int64_t macs = 0;
  double score = 0.0;
};

// Rows sorted by total MACs (stable, so equal-MAC points keep input order).
std::vector<FrontierRow> frontier(const std::vector<FrontierPoint>& points);

std::string frontier_to_csv(const std::vector<FrontierRow>& rows);
std::vector<FrontierRow> frontier_from_csv(const std::string& csv);

const char* kind_name(LayerKind kind);

}  // namespace audiotag::complexity
