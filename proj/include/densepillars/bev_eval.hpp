#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "densepillars/boxes.hpp"

namespace dpp {

/// Area of the overlap of two oriented BEV rectangles (convex clipping).
double bev_intersection_area(const Box3D& a, const Box3D& b);

/// Rotated bird's-eye-view IoU in [0, 1]. Degenerate boxes give 0.
double rotated_iou_bev(const Box3D& a, const Box3D& b);

/// Volume IoU: BEV overlap times z-interval overlap over the volume union.
double iou_3d(const Box3D& a, const Box3D& b);

/// Greedy rotated NMS. Candidates are visited by descending score (ties by
/// index); one is dropped when its BEV IoU with an already kept detection of
/// the same class exceeds `iou_threshold`. Returns kept indices in visit order.
std::vector<std::size_t> nms_bev(const std::vector<Detection>& dets, double iou_threshold);

enum class IouMode { kBev, k3D };

struct EvalConfig {
  std::array<double, kNumClasses> iou_thresholds{0.7, 0.5, 0.5};  // Car, Pedestrian, Cyclist
  int recall_points = 40;
  double nms_iou = 0.01;
  IouMode mode = IouMode::k3D;

  double threshold(ObjectClass c) const { return iou_thresholds[static_cast<std::size_t>(c)]; }
};

struct EvalFrame {
  std::vector<Detection> detections;
  std::vector<LabeledBox> ground_truth;
};

/// Average precision over the recall grid {1/R, ..., R/R} (R = recall_points)
/// using the interpolated precision envelope, pooled over frames. Detections
/// are matched greedily per frame by descending score to the unmatched
/// ground truth of highest IoU >= `iou_threshold`. Returns nullopt when the
/// class has no ground truth.
std::optional<double> ap_r40(const std::vector<EvalFrame>& frames, ObjectClass cls, double iou_threshold,
                             IouMode mode = IouMode::k3D, int recall_points = 40);

/// Per-class recall at the given IoU threshold, pooled over frames.
std::optional<double> recall_at(const std::vector<EvalFrame>& frames, ObjectClass cls, double iou_threshold,
                                IouMode mode);

struct EvalResult {
  std::array<std::optional<double>, kNumClasses> ap;
  double mean_ap = 0.0;
  std::vector<std::string> warnings;
};

/// AP per class and their mean; classes without ground truth are left out of
/// the mean and reported in `warnings`.
EvalResult evaluate_set(const std::vector<EvalFrame>& frames, const EvalConfig& cfg);

}  // namespace dpp
