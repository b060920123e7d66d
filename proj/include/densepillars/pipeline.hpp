#pragma once

#include <functional>
#include <string>
#include <vector>

#include "densepillars/config.hpp"
#include "densepillars/detector.hpp"

namespace dpp {

/// Synthetic-scene options covering the configured grid.
SynthOptions synth_options(const RunConfig& cfg, std::uint64_t scene_seed);
/// `count` scenes seeded from cfg.seed.
std::vector<LabeledScene> make_synthetic_set(const RunConfig& cfg, int count);

struct PreparedScene {
  PillarBatch pillars;
  TargetAssignment targets;
};

/// Pillarised, decorated frame plus its anchor targets.
PreparedScene prepare_scene(const LabeledScene& scene, const PointPillarsNet<float>& net, std::uint64_t seed,
                            bool cap_pillars);

struct LossRow {
  std::int64_t step = 0;
  double lr = 0, cls = 0, loc = 0, dir = 0, total = 0;
};

using StepCallback = std::function<void(const LossRow&)>;

/// Runs optimizer steps opt.step .. cfg.train.steps-1 over the scenes with
/// AdamW and a cosine schedule. Frames are drawn in seeded per-epoch
/// permutations. Throws InvariantError on a non-finite loss. Leaves the
/// network in eval mode.
std::vector<LossRow> train_model(PointPillarsNet<float>& net, OptimizerState<float>& opt,
                                 const std::vector<LabeledScene>& scenes, const RunConfig& cfg,
                                 const StepCallback& on_step = {});

/// Eval-mode forward pass and post-processing of one frame.
std::vector<Detection> detect(PointPillarsNet<float>& net, const PointCloud& cloud, const PostprocessOptions& opts);

struct GradSuiteRow {
  std::string name;
  double max_rel_error = 0;
  double tolerance = 0;
  int points = 0;
  bool passed() const { return max_rel_error <= tolerance; }
};

/// Finite-difference checks of every differentiable op (tolerance 1e-5) and
/// of a composed backbone -> neck -> head -> loss graph (1e-4), each at
/// `points` random inputs, in double precision.
std::vector<GradSuiteRow> run_gradient_suite(int points, std::uint64_t seed);

}  // namespace dpp
