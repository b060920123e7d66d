#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "densepillars/layers.hpp"
#include "densepillars/pointcloud.hpp"

namespace dpp {

/// Detection range and pillar grid. Ranges are half-open [lo, hi).
struct GridSpec {
  double x_min = 0.0, x_max = 69.12;
  double y_min = -39.68, y_max = 39.68;
  double z_min = -3.0, z_max = 1.0;
  double pillar_x = 0.16, pillar_y = 0.16;
  int max_points_per_pillar = 32;
  int max_pillars = 12000;
  int feature_channels = 64;

  /// Cells along x (columns).
  std::int64_t width() const;
  /// Cells along y (rows).
  std::int64_t height() const;
  /// Throws ConfigError unless the extents are whole multiples of the pillar
  /// size and every count is positive.
  void validate() const;
};

inline constexpr int kPointFeatures = 9;

/// Pillarised points. features is [P, max_points, 9]; slots past counts[i] are
/// zero. coords are (row = y index, col = x index).
struct PillarBatch {
  Tensor<float> features;
  std::vector<std::array<std::int32_t, 2>> coords;
  std::vector<std::int32_t> counts;
  std::vector<std::int32_t> batch_index;  // frame of each pillar
  std::int64_t num_pillars() const { return static_cast<std::int64_t>(counts.size()); }
};

struct PillarizeOptions {
  std::uint64_t seed = 0;
  /// Keep a seeded random subset when more than max_pillars are occupied.
  /// Training only; inference keeps every pillar.
  bool cap_pillars = false;
};

/// Bins points into pillars; only channels 0..3 (x, y, z, r) are filled.
/// Within a pillar, points are put in a canonical order before any
/// subsampling, so the result does not depend on input point order. Pillars
/// are ordered by (row, col).
PillarBatch pillarize(const PointCloud& cloud, const GridSpec& grid, const PillarizeOptions& opts = {});

/// Fills channels 4..6 (offset from the pillar's point mean) and 7..8 (offset
/// from the cell centre).
void decorate(PillarBatch& batch, const GridSpec& grid);

/// Stacks per-frame batches, tagging each pillar with its frame index.
PillarBatch concat_batches(const std::vector<PillarBatch>& frames);

/// Pillar feature net: linear(9 -> C, no bias) + BN + ReLU per point, then a
/// masked max over the point slots.
template <typename T>
class PillarFeatureNet {
 public:
  PillarFeatureNet(int out_channels, std::uint64_t seed);

  Var<T> forward(const PillarBatch& batch);
  void set_mode(NormMode mode) { bn_.mode = mode; }
  void collect(const std::string& prefix, ParameterSet<T>& out);
  int out_channels() const { return out_channels_; }

  Var<T>& weight() { return weight_; }
  BatchNormParams<T>& norm() { return bn_; }

 private:
  int out_channels_;
  Var<T> weight_;  // [9, C]
  BatchNormParams<T> bn_;
};

/// pseudo[b, :, row, col] = features[i] for pillar i of frame b; every other
/// cell is zero. Duplicate coordinates within a frame are an invariant error.
template <typename T>
Var<T> scatter_to_pseudo_image(const Var<T>& features, const std::vector<std::array<std::int32_t, 2>>& coords,
                               const std::vector<std::int32_t>& batch_index, std::int64_t batch_size,
                               const GridSpec& grid);

/// Inverse of scatter: reads back [P, C] from the pseudo-image.
template <typename T>
Tensor<T> gather_from_pseudo_image(const Tensor<T>& image, const std::vector<std::array<std::int32_t, 2>>& coords,
                                   const std::vector<std::int32_t>& batch_index);

}  // namespace dpp
