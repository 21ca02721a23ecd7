#include "audiotag/complexity.hpp"

#include <algorithm>
#include <sstream>

#include "audiotag/errors.hpp"

namespace audiotag::complexity {

LayerShape LayerShape::make_conv(std::string name, int64_t cin, int64_t cout, int64_t kh,
                                 int64_t kw, int64_t groups, int64_t hout, int64_t wout,
                                 bool has_bias, bool branch) {
  LayerShape s;
  s.kind = LayerKind::conv;
  s.name = std::move(name);
  s.branch = branch;
  s.cin = cin;
  s.cout = cout;
  s.kh = kh;
  s.kw = kw;
  s.groups = groups;
  s.hout = hout;
  s.wout = wout;
  s.has_bias = has_bias;
  return s;
}

LayerShape LayerShape::make_linear(std::string name, int64_t din, int64_t dout,
                                   bool has_bias, bool branch) {
  LayerShape s;
  s.kind = LayerKind::linear;
  s.name = std::move(name);
  s.branch = branch;
  s.din = din;
  s.dout = dout;
  s.has_bias = has_bias;
  return s;
}

LayerShape LayerShape::make_attention(std::string name, int64_t seq_len, int64_t model_dim,
                                      int64_t heads) {
  LayerShape s;
  s.kind = LayerKind::attention;
  s.name = std::move(name);
  s.seq_len = seq_len;
  s.model_dim = model_dim;
  s.heads = heads;
  return s;
}

LayerShape LayerShape::make_norm(std::string name, int64_t channels) {
  LayerShape s;
  s.kind = LayerKind::norm;
  s.name = std::move(name);
  s.channels = channels;
  return s;
}

namespace {
void check_conv(const LayerShape& s) {
  if (s.cin < 1 || s.cout < 1 || s.kh < 1 || s.kw < 1 || s.hout < 1 || s.wout < 1 ||
      s.groups < 1) {
    throw ShapeError("conv shape dims must be >= 1: " + s.name);
  }
  if (s.cin % s.groups != 0 || s.cout % s.groups != 0) {
    throw ShapeError("conv groups must divide cin and cout: " + s.name);
  }
}
}  // namespace

int64_t macs_conv(const LayerShape& s) {
  check_conv(s);
  return (s.cin / s.groups) * s.cout * s.kh * s.kw * s.hout * s.wout;
}

int64_t macs_linear(const LayerShape& s) {
  if (s.din < 1 || s.dout < 1) throw ShapeError("linear dims must be >= 1: " + s.name);
  return s.din * s.dout;
}

int64_t macs_attention(const LayerShape& s) {
  if (s.seq_len < 1 || s.model_dim < 1 || s.heads < 1) {
    throw ShapeError("attention dims must be >= 1: " + s.name);
  }
  if (s.model_dim % s.heads != 0) {
    throw ShapeError("attention model_dim must be divisible by heads: " + s.name);
  }
  // Q, K, V and output projections plus score and value-aggregation products.
  return 4 * s.seq_len * s.model_dim * s.model_dim +
         2 * s.seq_len * s.seq_len * s.model_dim;
}

int64_t layer_macs(const LayerShape& s) {
  switch (s.kind) {
    case LayerKind::conv:
      return macs_conv(s);
    case LayerKind::linear:
      return macs_linear(s);
    case LayerKind::attention:
      return macs_attention(s);
    case LayerKind::norm:
      return 0;
  }
  throw ShapeError("unknown layer kind");
}

int64_t layer_params(const LayerShape& s) {
  switch (s.kind) {
    case LayerKind::conv:
      check_conv(s);
      return (s.cin / s.groups) * s.cout * s.kh * s.kw + (s.has_bias ? s.cout : 0);
    case LayerKind::linear:
      return s.din * s.dout + (s.has_bias ? s.dout : 0);
    case LayerKind::attention:
      return 4 * s.model_dim * (s.model_dim + 1);
    case LayerKind::norm:
      return 2 * s.channels;
  }
  throw ShapeError("unknown layer kind");
}

ComplexityReport analyze(const NetworkDescription& desc) {
  ComplexityReport rep;
  rep.input_mels = desc.input_mels;
  rep.input_frames = desc.input_frames;

  // Trunk composability: track the feature width produced so far.
  int64_t width = -1;
  for (const LayerShape& s : desc.layers) {
    if (!s.branch) {
      int64_t in_width = -1, out_width = -1;
      switch (s.kind) {
        case LayerKind::conv:
          in_width = s.cin;
          out_width = s.cout;
          break;
        case LayerKind::linear:
          in_width = s.din;
          out_width = s.dout;
          break;
        case LayerKind::attention:
          in_width = s.model_dim;
          out_width = s.model_dim;
          break;
        case LayerKind::norm:
          in_width = s.channels;
          out_width = s.channels;
          break;
      }
      if (width >= 0 && in_width != width) {
        throw ShapeError("description does not compose at layer '" + s.name + "': expects " +
                         std::to_string(in_width) + " input features, previous layer emits " +
                         std::to_string(width));
      }
      width = out_width;
    }
    rep.per_layer.push_back({s.name, s.kind, layer_macs(s), layer_params(s)});
    rep.total_macs += rep.per_layer.back().macs;
    rep.total_params += rep.per_layer.back().params;
  }
  return rep;
}

const char* kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv:
      return "conv";
    case LayerKind::linear:
      return "linear";
    case LayerKind::attention:
      return "attention";
    case LayerKind::norm:
      return "norm";
  }
  return "?";
}

std::string report_table(const ComplexityReport& report) {
  std::ostringstream os;
  os << "layer                                    kind        MACs        params\n";
  os << "----------------------------------------------------------------------\n";
  for (const LayerReport& l : report.per_layer) {
    os << l.name;
    for (size_t i = l.name.size(); i < 41; ++i) os << ' ';
    std::string k = kind_name(l.kind);
    os << k;
    for (size_t i = k.size(); i < 10; ++i) os << ' ';
    std::string m = std::to_string(l.macs), p = std::to_string(l.params);
    for (size_t i = m.size(); i < 12; ++i) os << ' ';
    os << m;
    for (size_t i = p.size(); i < 14; ++i) os << ' ';
    os << p << "\n";
  }
  os << "----------------------------------------------------------------------\n";
  os << "total MACs " << report.total_macs << ", total params " << report.total_params
     << " (input " << report.input_mels << " mels x " << report.input_frames
     << " frames)\n";
  return os.str();
}

std::vector<FrontierRow> frontier(const std::vector<FrontierPoint>& points) {
  if (points.empty()) throw ConfigError("frontier: need at least one point");
  std::vector<FrontierRow> rows;
  rows.reserve(points.size());
  for (const FrontierPoint& p : points) {
    rows.push_back({p.label, p.report.total_params, p.report.total_macs, p.score});
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const FrontierRow& a, const FrontierRow& b) { return a.macs < b.macs; });
  return rows;
}

std::string frontier_to_csv(const std::vector<FrontierRow>& rows) {
  std::ostringstream os;
  os << "label,params,macs,score\n";
  os.precision(17);
  for (const FrontierRow& r : rows) {
    os << r.label << "," << r.params << "," << r.macs << "," << r.score << "\n";
  }
  return os.str();
}

std::vector<FrontierRow> frontier_from_csv(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  std::vector<FrontierRow> rows;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("label,", 0) == 0) continue;  // header
    }
    std::istringstream ls(line);
    FrontierRow r;
    std::string field;
    if (!std::getline(ls, r.label, ',')) throw DataError("frontier csv: bad row: " + line);
    if (!std::getline(ls, field, ',')) throw DataError("frontier csv: bad row: " + line);
    r.params = std::stoll(field);
    if (!std::getline(ls, field, ',')) throw DataError("frontier csv: bad row: " + line);
    r.macs = std::stoll(field);
    if (!std::getline(ls, field, ',')) throw DataError("frontier csv: bad row: " + line);
    r.score = std::stod(field);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace audiotag::complexity
