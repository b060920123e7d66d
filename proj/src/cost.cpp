#include "densepillars/cost.hpp"

#include <iomanip>
#include <sstream>

#include "densepillars/errors.hpp"

namespace dpp {

namespace {

// conv (no bias) + BN + ReLU at the given output resolution.
CostCount conv_bn_relu(std::int64_t c_in, std::int64_t c_out, std::int64_t k, std::int64_t ho, std::int64_t wo) {
  CostCount c;
  const std::int64_t w = c_out * c_in * k * k;
  c.params = w + 2 * c_out;
  c.macs = w * ho * wo;
  c.bn_elements = c_out * ho * wo;
  c.relu_elements = c_out * ho * wo;
  return c;
}

std::int64_t halve_even(std::int64_t x, const char* what) {
  if (x % 2 != 0) throw ConfigError(std::string(what) + ": resolution " + std::to_string(x) + " is not divisible by 2");
  return x / 2;
}

void require_resolution(std::int64_t h, std::int64_t w) {
  if (h < 1 || w < 1) throw ConfigError("cost: input resolution must be positive");
}

std::string fmt_fixed(double v, int prec) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

}  // namespace

CostCount& CostCount::operator+=(const CostCount& o) {
  params += o.params;
  macs += o.macs;
  bn_elements += o.bn_elements;
  relu_elements += o.relu_elements;
  pool_elements += o.pool_elements;
  return *this;
}

CostCount backbone_cost(const DenseBackboneSpec& spec, std::int64_t h, std::int64_t w) {
  spec.validate();
  require_resolution(h, w);
  CostCount total;
  std::int64_t c = spec.input_channels;
  for (int b = 0; b < 3; ++b) {
    const std::int64_t k = spec.growth.rate(b + 1);
    for (int i = 0; i < spec.layers_per_block[b]; ++i) total += conv_bn_relu(i == 0 ? c : k, k, 3, h, w);
    const std::int64_t cat = c + spec.layers_per_block[b] * k;
    const std::int64_t out = spec.transition_out_channels[b];
    total += conv_bn_relu(cat, out, 1, h, w);
    if (spec.downsample == Downsample::kAvgPool) {
      total.pool_elements += out * h * w;
      h = halve_even(h, "dense backbone");
      w = halve_even(w, "dense backbone");
    } else {
      h = conv_out_size(h, 3, 2, 1);
      w = conv_out_size(w, 3, 2, 1);
      total += conv_bn_relu(out, out, 3, h, w);
    }
    c = out;
  }
  return total;
}

CostCount backbone_cost(const BaselineBackboneSpec& spec, std::int64_t h, std::int64_t w) {
  spec.validate();
  require_resolution(h, w);
  CostCount total;
  std::int64_t c = spec.input_channels;
  for (int b = 0; b < 3; ++b) {
    const std::int64_t out = spec.channels[b];
    h = conv_out_size(h, 3, 2, 1);
    w = conv_out_size(w, 3, 2, 1);
    total += conv_bn_relu(c, out, 3, h, w);
    for (int i = 0; i < spec.layers_per_block[b]; ++i) total += conv_bn_relu(out, out, 3, h, w);
    c = out;
  }
  return total;
}

CostCount backbone_cost(const BackboneConfig& cfg, std::int64_t h, std::int64_t w) {
  return cfg.kind == BackboneKind::kDense ? backbone_cost(cfg.dense, h, w) : backbone_cost(cfg.baseline, h, w);
}

CostCount neck_cost(const NeckSpec& spec, std::int64_t h, std::int64_t w) {
  require_resolution(h, w);
  CostCount total;
  for (int i = 0; i < 3; ++i) {
    h = halve_even(h, "neck");
    w = halve_even(w, "neck");
    const std::int64_t s = spec.upsample_strides[static_cast<std::size_t>(i)];
    const std::int64_t ci = spec.in_channels[static_cast<std::size_t>(i)];
    const std::int64_t co = spec.out_channels[static_cast<std::size_t>(i)];
    if (s < 1 || ci < 1 || co < 1) throw ConfigError("neck: channels and strides must be >= 1");
    const std::int64_t wgt = ci * co * s * s;
    total.params += wgt + 2 * co;
    total.macs += wgt * h * w;
    total.bn_elements += co * h * s * w * s;
    total.relu_elements += co * h * s * w * s;
  }
  return total;
}

CostCount head_cost(int in_channels, std::int64_t h, std::int64_t w) {
  require_resolution(h, w);
  if (in_channels < 1) throw ConfigError("head: in_channels must be >= 1");
  const std::int64_t outs = AnchorConfig::kPerCell * (kNumClasses + kBoxCode + kDirBins);
  CostCount c;
  c.params = outs * in_channels + outs;
  c.macs = outs * in_channels * h * w;
  return c;
}

CostCount encoder_cost(const GridSpec& grid) {
  grid.validate();
  const std::int64_t c = grid.feature_channels;
  const std::int64_t rows = static_cast<std::int64_t>(grid.max_pillars) * grid.max_points_per_pillar;
  CostCount cc;
  cc.params = kPointFeatures * c + 2 * c;
  cc.macs = kPointFeatures * c * rows;
  cc.bn_elements = c * rows;
  cc.relu_elements = c * rows;
  return cc;
}

std::int64_t count_params(const DenseBackboneSpec& spec) { return backbone_cost(spec, 8, 8).params; }
std::int64_t count_params(const BaselineBackboneSpec& spec) { return backbone_cost(spec, 8, 8).params; }
std::int64_t count_params(const BackboneConfig& cfg) { return backbone_cost(cfg, 8, 8).params; }
std::int64_t count_params(const NeckSpec& spec) { return neck_cost(spec, 8, 8).params; }
std::int64_t count_macs(const DenseBackboneSpec& spec, std::int64_t h, std::int64_t w) {
  return backbone_cost(spec, h, w).macs;
}
std::int64_t count_macs(const BaselineBackboneSpec& spec, std::int64_t h, std::int64_t w) {
  return backbone_cost(spec, h, w).macs;
}
std::int64_t count_macs(const BackboneConfig& cfg, std::int64_t h, std::int64_t w) { return backbone_cost(cfg, h, w).macs; }

CostCount CostReport::total() const {
  CostCount t;
  for (const auto& r : rows) t += r.cost;
  return t;
}

const CostRow& CostReport::row(const std::string& component) const {
  for (const auto& r : rows)
    if (r.component == component) return r;
  throw InvariantError("cost report has no row '" + component + "'");
}

ComponentReport component_report(const ModelConfig& cfg) {
  const std::int64_t h = cfg.grid.height(), w = cfg.grid.width();
  auto one = [&](BackboneKind kind) {
    BackboneConfig bc = cfg.backbone;
    bc.kind = kind;
    CostReport r;
    r.backbone = kind == BackboneKind::kDense ? "dense" : "baseline";
    r.channels = cfg.grid.feature_channels;
    r.height = h;
    r.width = w;
    r.rows.push_back({"encoder", encoder_cost(cfg.grid)});
    r.rows.push_back({"backbone", backbone_cost(bc, h, w)});
    r.rows.push_back({"neck", neck_cost(cfg.neck, h, w)});
    r.rows.push_back({"head", head_cost(cfg.neck.fused_channels(), h / cfg.anchors.feature_stride,
                                        w / cfg.anchors.feature_stride)});
    return r;
  };
  ComponentReport rep;
  rep.dense = one(BackboneKind::kDense);
  rep.baseline = one(BackboneKind::kBaseline);
  const auto& db = rep.dense.row("backbone").cost;
  const auto& bb = rep.baseline.row("backbone").cost;
  rep.param_ratio = static_cast<double>(bb.params) / static_cast<double>(db.params);
  rep.mac_ratio = static_cast<double>(bb.macs) / static_cast<double>(db.macs);
  return rep;
}

std::string ComponentReport::render_table() const {
  std::ostringstream os;
  os << "input " << dense.channels << "x" << dense.height << "x" << dense.width
     << ", 1 MAC = 1 FLOP, convolutions only\n";
  os << std::left << std::setw(10) << "backbone" << std::setw(10) << "component" << std::right << std::setw(14)
     << "params" << std::setw(10) << "M" << std::setw(18) << "MACs" << std::setw(10) << "G" << std::setw(16)
     << "elem ops" << "\n";
  for (const auto* r : {&baseline, &dense}) {
    for (const auto& row : r->rows) {
      os << std::left << std::setw(10) << r->backbone << std::setw(10) << row.component << std::right << std::setw(14)
         << row.cost.params << std::setw(10) << fmt_fixed(row.cost.params / 1e6, 3) << std::setw(18) << row.cost.macs
         << std::setw(10) << fmt_fixed(row.cost.macs / 1e9, 3) << std::setw(16) << row.cost.element_ops() << "\n";
    }
  }
  os << "backbone param ratio (baseline/dense) " << fmt_fixed(param_ratio, 3) << "\n";
  os << "backbone MAC ratio   (baseline/dense) " << fmt_fixed(mac_ratio, 3) << "\n";
  return os.str();
}

std::string ComponentReport::csv() const {
  std::ostringstream os;
  os << "component,params,macs\n";
  for (const auto* r : {&baseline, &dense})
    for (const auto& row : r->rows) os << r->backbone << "." << row.component << "," << row.cost.params << "," << row.cost.macs << "\n";
  return os.str();
}

}  // namespace dpp
