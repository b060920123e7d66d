#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "densepillars/detector.hpp"

namespace dpp {

/// Exact counts for one component. `macs` covers convolutions (and the
/// encoder's linear map) only; BN, ReLU and pooling are reported as element
/// counts on the side.
struct CostCount {
  std::int64_t params = 0;
  std::int64_t macs = 0;
  std::int64_t bn_elements = 0;
  std::int64_t relu_elements = 0;
  std::int64_t pool_elements = 0;  // pooled input elements

  std::int64_t element_ops() const { return bn_elements + relu_elements + pool_elements; }
  CostCount& operator+=(const CostCount& o);
};

/// Costs of a dense/baseline backbone fed an H x W pseudo-image. Throws
/// ConfigError if the backbone spec is invalid or a resolution does not divide.
CostCount backbone_cost(const DenseBackboneSpec& spec, std::int64_t h, std::int64_t w);
CostCount backbone_cost(const BaselineBackboneSpec& spec, std::int64_t h, std::int64_t w);
CostCount backbone_cost(const BackboneConfig& cfg, std::int64_t h, std::int64_t w);
/// Neck over taps at H/2, H/4, H/8 of an H x W pseudo-image.
CostCount neck_cost(const NeckSpec& spec, std::int64_t h, std::int64_t w);
/// Head on an H x W fused map.
CostCount head_cost(int in_channels, std::int64_t h, std::int64_t w);
/// Pillar feature net at full pillar capacity (max_pillars x max_points).
CostCount encoder_cost(const GridSpec& grid);

std::int64_t count_params(const DenseBackboneSpec& spec);
std::int64_t count_params(const BaselineBackboneSpec& spec);
std::int64_t count_params(const BackboneConfig& cfg);
std::int64_t count_params(const NeckSpec& spec);
std::int64_t count_macs(const DenseBackboneSpec& spec, std::int64_t h, std::int64_t w);
std::int64_t count_macs(const BaselineBackboneSpec& spec, std::int64_t h, std::int64_t w);
std::int64_t count_macs(const BackboneConfig& cfg, std::int64_t h, std::int64_t w);

struct CostRow {
  std::string component;  // encoder, backbone, neck, head
  CostCount cost;
};

struct CostReport {
  std::string backbone;  // dense or baseline
  std::int64_t channels = 0, height = 0, width = 0;
  std::vector<CostRow> rows;

  CostCount total() const;
  const CostRow& row(const std::string& component) const;
};

struct ComponentReport {
  CostReport dense;
  CostReport baseline;
  double param_ratio = 0;  // baseline / dense backbone params
  double mac_ratio = 0;    // baseline / dense backbone MACs

  std::string render_table() const;
  /// `component,params,macs` with components named `<backbone>.<row>`.
  std::string csv() const;
};

/// Both backbones (the dense one from cfg.backbone.dense, the baseline from
/// cfg.backbone.baseline) in the pipeline described by cfg.
ComponentReport component_report(const ModelConfig& cfg);

}  // namespace dpp
