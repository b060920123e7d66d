#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "densepillars/boxes.hpp"

namespace dpp {

struct LidarPoint {
  float x = 0, y = 0, z = 0;
  float r = 0;  // reflectance in [0, 1]
};

struct PointCloud {
  std::vector<LidarPoint> points;
};

struct LabeledScene {
  PointCloud cloud;
  std::vector<LabeledBox> boxes;
};

/// KITTI velodyne format: packed little-endian float32 (x, y, z, r), no header.
PointCloud read_kitti_bin(const std::filesystem::path& path);
void write_kitti_bin(const std::filesystem::path& path, const PointCloud& cloud);

/// Label CSV with header `class,cx,cy,cz,w,l,h,yaw`. Yaw is wrapped into
/// (-pi, pi] on both write and read.
void write_labels_csv(const std::filesystem::path& path, const std::vector<LabeledBox>& boxes);
std::vector<LabeledBox> read_labels_csv(const std::filesystem::path& path);

/// Prediction CSV: the label columns followed by `score`.
void write_predictions_csv(const std::filesystem::path& path, const std::vector<Detection>& dets);
std::vector<Detection> read_predictions_csv(const std::filesystem::path& path);

struct SynthOptions {
  std::uint64_t seed = 0;
  int n_boxes = 5;
  std::array<double, 3> class_mix{0.5, 0.25, 0.25};  // Car, Pedestrian, Cyclist
  double noise = 0.02;                                // uniform jitter bound, metres
  std::array<double, 2> x_range{0.0, 69.12};
  std::array<double, 2> y_range{-39.68, 39.68};
  double ground_z = -1.73;
  double ground_density = 0.5;  // points per square metre
  int clutter_points = 200;
};

/// Class-typical box size (w, l, h).
std::array<double, 3> typical_size(ObjectClass c);

/// Deterministic synthetic scene: boxes with class-typical sizes placed
/// without BEV overlap, points sampled on their side and top faces, a ground plane
/// and uniform clutter outside every box. Each box receives >= 30 points.
LabeledScene synth_scene(const SynthOptions& opts);

}  // namespace dpp
