#pragma once

#include <array>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include "densepillars/backbone.hpp"
#include "densepillars/bev_eval.hpp"
#include "densepillars/pillars.hpp"

namespace dpp {

struct NeckSpec {
  std::array<int, 3> in_channels{64, 128, 256};
  std::array<int, 3> upsample_strides{1, 2, 4};
  std::array<int, 3> out_channels{128, 128, 128};

  int fused_channels() const { return out_channels[0] + out_channels[1] + out_channels[2]; }
};

struct AnchorClassConfig {
  std::array<double, 3> size;  // w, l, h
  double z_center;
  double match_iou;
  double unmatch_iou;
};

struct AnchorConfig {
  std::array<AnchorClassConfig, kNumClasses> classes{{
      {{1.6, 3.9, 1.56}, -1.0, 0.6, 0.45},
      {{0.6, 0.8, 1.73}, -0.6, 0.5, 0.35},
      {{0.6, 1.76, 1.73}, -0.6, 0.5, 0.35},
  }};
  std::array<double, 2> rotations{0.0, std::numbers::pi / 2};
  int feature_stride = 2;

  static constexpr int kRotations = 2;
  static constexpr int kPerCell = kNumClasses * kRotations;
  const AnchorClassConfig& of(ObjectClass c) const { return classes[static_cast<std::size_t>(c)]; }
};

inline constexpr int kBoxCode = 7;
inline constexpr int kDirBins = 2;

struct Anchor {
  Box3D box;
  ObjectClass cls;
};

/// Anchors over a rows x cols feature grid whose cells are `feature_stride`
/// pillars wide, centred on the cells. Order: row-major cells, then class,
/// then rotation.
std::vector<Anchor> generate_anchors(std::int64_t rows, std::int64_t cols, const GridSpec& grid,
                                     const AnchorConfig& cfg);

/// Residual box coding with diagonal-normalised centre offsets, log size
/// ratios and a raw angle difference.
std::array<double, kBoxCode> encode_box(const Box3D& gt, const Box3D& anchor);
Box3D decode_box(std::span<const double, kBoxCode> deltas, const Box3D& anchor);

inline constexpr int kIgnore = -2;
inline constexpr int kNegative = -1;

struct TargetAssignment {
  /// Per anchor: ground-truth index (positive), kNegative or kIgnore.
  std::vector<int> label;
  std::vector<std::array<double, kBoxCode>> regression;  // valid for positives
  std::vector<int> direction;                            // 1 if gt yaw >= 0
  std::vector<ObjectClass> gt_class;                     // per ground-truth box
  int num_positive = 0;
};

/// BEV-IoU matching of each anchor class against ground truth of the same
/// class: positive at IoU >= match, negative below unmatch, otherwise ignored.
/// Every ground truth then claims its best anchor (ties: lowest index) when
/// that IoU is positive.
TargetAssignment assign_targets(const std::vector<Anchor>& anchors, const std::vector<LabeledBox>& gts,
                                const AnchorConfig& cfg);

template <typename T>
struct HeadOutputs {
  Var<T> cls;  // [N, A*3, H, W]
  Var<T> box;  // [N, A*7, H, W]
  Var<T> dir;  // [N, A*2, H, W]
};

/// Upsamples each tap with a transposed conv (kernel == stride) + BN + ReLU
/// and concatenates the results.
template <typename T>
class Fpn {
 public:
  Fpn(const NeckSpec& spec, std::uint64_t seed);
  Var<T> forward(const FeatureTaps<T>& taps);
  void set_mode(NormMode mode);
  void collect(const std::string& prefix, ParameterSet<T>& out);
  const NeckSpec& spec() const { return spec_; }

 private:
  NeckSpec spec_;
  std::array<Var<T>, 3> deconv_;
  std::array<BatchNormParams<T>, 3> bn_;
};

/// Three parallel 1x1 convs with bias: class logits, box residuals, direction
/// logits.
template <typename T>
class AnchorHead {
 public:
  AnchorHead(int in_channels, std::uint64_t seed);
  HeadOutputs<T> forward(const Var<T>& fused);
  void collect(const std::string& prefix, ParameterSet<T>& out);

 private:
  Conv2dParams<T> cls_, box_, dir_;
};

struct LossWeights {
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double smooth_l1_beta = 1.0 / 9.0;
  double cls = 1.0;
  double loc = 2.0;
  double dir = 0.2;
};

template <typename T>
struct LossOutput {
  Var<T> total;
  double cls = 0, loc = 0, dir = 0;
  int num_positive = 0;
};

/// Sigmoid focal loss of one logit against a 0/1 target.
double sigmoid_focal(double logit, int target, double alpha, double gamma);

/// Focal classification over non-ignored anchors, smooth-L1 box regression on
/// positives with the angle residual replaced by sin(pred - target), and
/// direction cross-entropy on positives; each normalised by max(#positives, 1).
/// `targets` holds one assignment per frame, with anchors ordered as
/// generate_anchors over the head's H x W grid.
template <typename T>
LossOutput<T> detection_loss(const HeadOutputs<T>& out, const std::vector<TargetAssignment>& targets,
                             const LossWeights& w = {});

struct PostprocessOptions {
  double score_threshold = 0.1;
  double nms_iou = 0.01;
  int pre_nms_top = 1000;
  int max_detections = 100;
};

/// Sigmoid scores, thresholding, decoding with direction-corrected yaw and
/// class-wise rotated NMS, for frame `frame` of the outputs.
template <typename T>
std::vector<Detection> postprocess(const HeadOutputs<T>& out, std::int64_t frame, const std::vector<Anchor>& anchors,
                                   const PostprocessOptions& opts = {});

/// Resolves the heading of a decoded yaw using the direction bin.
double direction_corrected_yaw(double yaw, int dir_label);

struct ModelConfig {
  GridSpec grid;
  BackboneConfig backbone;
  NeckSpec neck;
  AnchorConfig anchors;
  std::uint64_t seed = 0;
};

/// Encoder + backbone + neck + head. The backbone is swappable without
/// touching the other stages; each stage draws its weights from its own seed
/// stream, so neck and head weights do not depend on the backbone choice.
template <typename T>
class PointPillarsNet {
 public:
  explicit PointPillarsNet(const ModelConfig& cfg);

  struct Trace {
    Var<T> pillar_features;
    Var<T> pseudo_image;
    FeatureTaps<T> taps;
    Var<T> fused;
    HeadOutputs<T> head;
  };

  Trace forward_trace(const PillarBatch& batch, std::int64_t batch_size);
  HeadOutputs<T> forward(const PillarBatch& batch, std::int64_t batch_size) {
    return forward_trace(batch, batch_size).head;
  }
  Trace forward_pseudo(const Var<T>& pseudo_image);

  void set_mode(NormMode mode);
  ParameterSet<T> parameters();
  const ModelConfig& config() const { return cfg_; }
  std::int64_t feature_rows() const { return cfg_.grid.height() / cfg_.anchors.feature_stride; }
  std::int64_t feature_cols() const { return cfg_.grid.width() / cfg_.anchors.feature_stride; }
  const std::vector<Anchor>& anchors() const { return anchors_; }

  PillarFeatureNet<T>& encoder() { return encoder_; }
  Backbone<T>& backbone() { return *backbone_; }
  Fpn<T>& neck() { return neck_; }
  AnchorHead<T>& head() { return head_; }

 private:
  ModelConfig cfg_;
  PillarFeatureNet<T> encoder_;
  std::unique_ptr<Backbone<T>> backbone_;
  Fpn<T> neck_;
  AnchorHead<T> head_;
  std::vector<Anchor> anchors_;
};

}  // namespace dpp
