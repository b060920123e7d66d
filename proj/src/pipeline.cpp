#include "densepillars/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "densepillars/errors.hpp"
#include "densepillars/gradcheck.hpp"

namespace dpp {

namespace {

// splitmix64 step; derives independent seeds from (seed, stream).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void clip_gradients(std::vector<NamedParam<float>>& params, double max_norm) {
  if (max_norm <= 0) return;
  double sq = 0.0;
  for (auto& p : params)
    if (p.var.has_grad())
      for (float g : p.var.grad().data()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return;
  const float scale = static_cast<float>(max_norm / norm);
  for (auto& p : params)
    if (p.var.has_grad())
      for (float& g : p.var.node()->grad.data()) g *= scale;
}

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

}  // namespace

SynthOptions synth_options(const RunConfig& cfg, std::uint64_t scene_seed) {
  SynthOptions o;
  o.seed = scene_seed;
  o.n_boxes = cfg.synth.boxes;
  o.noise = cfg.synth.noise;
  o.clutter_points = cfg.synth.clutter;
  o.ground_density = cfg.synth.ground_density;
  o.x_range = {cfg.model.grid.x_min, cfg.model.grid.x_max};
  o.y_range = {cfg.model.grid.y_min, cfg.model.grid.y_max};
  return o;
}

std::vector<LabeledScene> make_synthetic_set(const RunConfig& cfg, int count) {
  std::vector<LabeledScene> out;
  for (int i = 0; i < count; ++i)
    out.push_back(synth_scene(synth_options(cfg, mix_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(i)))));
  return out;
}

PreparedScene prepare_scene(const LabeledScene& scene, const PointPillarsNet<float>& net, std::uint64_t seed,
                            bool cap_pillars) {
  const auto& cfg = net.config();
  PreparedScene p;
  p.pillars = pillarize(scene.cloud, cfg.grid, {seed, cap_pillars});
  decorate(p.pillars, cfg.grid);
  p.targets = assign_targets(net.anchors(), scene.boxes, cfg.anchors);
  return p;
}

std::vector<LossRow> train_model(PointPillarsNet<float>& net, OptimizerState<float>& opt,
                                 const std::vector<LabeledScene>& scenes, const RunConfig& cfg,
                                 const StepCallback& on_step) {
  if (scenes.empty()) throw ConfigError("train: no scenes");
  const std::int64_t total = cfg.train.steps;
  const std::int64_t bs = std::min<std::int64_t>(cfg.train.batch_size, static_cast<std::int64_t>(scenes.size()));
  std::vector<PreparedScene> prepared;
  for (std::size_t i = 0; i < scenes.size(); ++i)
    prepared.push_back(prepare_scene(scenes[i], net, mix_seed(cfg.seed, 2000 + i), true));

  const std::size_t n = scenes.size();
  auto frame_at = [&](std::int64_t k) {
    const std::uint64_t epoch = static_cast<std::uint64_t>(k) / n;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(mix_seed(cfg.seed, 3000 + epoch));
    std::shuffle(perm.begin(), perm.end(), rng);
    return perm[static_cast<std::size_t>(k) % n];
  };

  auto params = net.parameters();
  opt.options.weight_decay = cfg.train.weight_decay;
  net.set_mode(NormMode::kTrain);
  std::vector<LossRow> rows;
  for (std::int64_t t = opt.step; t < total; ++t) {
    std::vector<PillarBatch> frames;
    std::vector<TargetAssignment> targets;
    for (std::int64_t i = 0; i < bs; ++i) {
      const auto& ps = prepared[frame_at(t * bs + i)];
      frames.push_back(ps.pillars);
      targets.push_back(ps.targets);
    }
    for (auto& p : params.params) p.var.zero_grad();
    auto head = net.forward(concat_batches(frames), bs);
    auto loss = detection_loss(head, targets);
    LossRow row{t, cosine_lr(t, total, cfg.train.lr, cfg.train.lr_min), loss.cls, loss.loc, loss.dir,
                static_cast<double>(loss.total.value()[0])};
    if (!std::isfinite(row.total) || !std::isfinite(row.cls) || !std::isfinite(row.loc) || !std::isfinite(row.dir)) {
      net.set_mode(NormMode::kEval);
      throw InvariantError("train: non-finite loss at step " + std::to_string(t) + " (cls " + std::to_string(row.cls) +
                           ", loc " + std::to_string(row.loc) + ", dir " + std::to_string(row.dir) + ")");
    }
    backward(loss.total);
    clip_gradients(params.params, cfg.train.grad_clip);
    opt.options.lr = row.lr;
    adamw_step(params.params, opt);
    rows.push_back(row);
    if (on_step) on_step(row);
  }
  net.set_mode(NormMode::kEval);
  return rows;
}

std::vector<Detection> detect(PointPillarsNet<float>& net, const PointCloud& cloud, const PostprocessOptions& opts) {
  NoGradGuard ng;
  auto batch = pillarize(cloud, net.config().grid, {0, false});
  decorate(batch, net.config().grid);
  auto head = net.forward(batch, 1);
  return postprocess(head, 0, net.anchors(), opts);
}

std::vector<GradSuiteRow> run_gradient_suite(int points, std::uint64_t seed) {
  std::vector<GradSuiteRow> rows;
  std::mt19937_64 rng(seed);
  constexpr double kOpTol = 1e-5, kComposedTol = 1e-4;

  auto run = [&](const std::string& name, double tol, const std::function<GradCheckReport(std::mt19937_64&)>& one) {
    GradSuiteRow row{name, 0.0, tol, points};
    for (int i = 0; i < points; ++i) row.max_rel_error = std::max(row.max_rel_error, one(rng).max_rel_error);
    rows.push_back(row);
  };
  using Vs = std::vector<Var<double>>;

  for (int stride : {1, 2}) {
    run("conv2d 3x3 stride " + std::to_string(stride), kOpTol, [stride](std::mt19937_64& r) {
      return grad_check([stride](const Vs& in) { return conv2d(in[0], Conv2dParams<double>{in[1], in[2], stride, 1}); },
                        {random_tensor({2, 3, 5, 6}, r), random_tensor({4, 3, 3, 3}, r), random_tensor({4}, r)}, 1e-6,
                        r());
    });
  }
  run("conv_transpose2d stride 2", kOpTol, [](std::mt19937_64& r) {
    return grad_check([](const Vs& in) { return conv_transpose2d(in[0], in[1], 2); },
                      {random_tensor({2, 3, 3, 4}, r), random_tensor({3, 4, 2, 2}, r)}, 1e-6, r());
  });
  for (NormMode mode : {NormMode::kTrain, NormMode::kEval}) {
    run(mode == NormMode::kTrain ? "batch_norm train" : "batch_norm eval", kOpTol, [mode](std::mt19937_64& r) {
      auto rm = random_tensor({3}, r), rv = random_tensor({3}, r, 0.5, 2.0);
      return grad_check(
          [&](const Vs& in) {
            auto bn = BatchNormParams<double>::create(3);
            bn.gamma = in[1];
            bn.beta = in[2];
            bn.running_mean = rm;
            bn.running_var = rv;
            bn.mode = mode;
            return batch_norm(in[0], bn);
          },
          {random_tensor({2, 3, 3, 4}, r), random_tensor({3}, r, 0.5, 1.5), random_tensor({3}, r)}, 1e-6, r());
    });
  }
  run("relu", kOpTol, [](std::mt19937_64& r) {
    return grad_check([](const Vs& in) { return relu(in[0]); }, {random_tensor({2, 3, 4, 4}, r)}, 1e-6, r());
  });
  run("avg_pool2x2", kOpTol, [](std::mt19937_64& r) {
    return grad_check([](const Vs& in) { return avg_pool2x2(in[0]); }, {random_tensor({2, 3, 4, 6}, r)}, 1e-6, r());
  });
  run("channel_concat", kOpTol, [](std::mt19937_64& r) {
    return grad_check([](const Vs& in) { return channel_concat(Vs{in[0], in[1]}); },
                      {random_tensor({2, 2, 3, 3}, r), random_tensor({2, 3, 3, 3}, r)}, 1e-6, r());
  });
  run("linear_map", kOpTol, [](std::mt19937_64& r) {
    return grad_check([](const Vs& in) { return linear_map(in[0], in[1], in[2]); },
                      {random_tensor({6, 9}, r), random_tensor({9, 4}, r), random_tensor({4}, r)}, 1e-6, r());
  });
  run("max_over_axis masked", kOpTol, [](std::mt19937_64& r) {
    std::vector<bool> mask{true, true, false, true, false, false, true, true};
    return grad_check([mask](const Vs& in) { return max_over_axis(in[0], 1, &mask); }, {random_tensor({2, 4, 3}, r)},
                      1e-6, r());
  });
  run("reshape", kOpTol, [](std::mt19937_64& r) {
    return grad_check([](const Vs& in) { return reshape(in[0], {3, 8}); }, {random_tensor({2, 3, 4}, r)}, 1e-6, r());
  });
  run("scatter_to_pseudo_image", kOpTol, [](std::mt19937_64& r) {
    GridSpec g;
    g.x_min = 0;
    g.x_max = 0.64;
    g.y_min = 0;
    g.y_max = 0.64;
    std::vector<std::array<std::int32_t, 2>> coords{{0, 1}, {2, 3}, {1, 1}};
    std::vector<std::int32_t> bidx{0, 0, 1};
    return grad_check([&](const Vs& in) { return scatter_to_pseudo_image(in[0], coords, bidx, 2, g); },
                      {random_tensor({3, 5}, r)}, 1e-6, r());
  });

  // Small pipeline used by the loss rows.
  ModelConfig mc;
  mc.grid.x_min = 0;
  mc.grid.x_max = 8;
  mc.grid.y_min = -4;
  mc.grid.y_max = 4;
  mc.grid.pillar_x = mc.grid.pillar_y = 0.5;
  mc.grid.feature_channels = 4;
  mc.backbone.dense.input_channels = 4;
  mc.backbone.dense.layers_per_block = {1, 2, 1};
  mc.backbone.dense.growth = GrowthSchedule::fixed(3);
  mc.backbone.dense.transition_out_channels = {4, 6, 8};
  mc.neck.in_channels = {4, 6, 8};
  mc.neck.out_channels = {3, 3, 3};
  mc.seed = seed;
  PointPillarsNet<double> net(mc);
  const std::int64_t rows_h = net.feature_rows(), cols_w = net.feature_cols();
  std::vector<TargetAssignment> targets{
      assign_targets(net.anchors(),
                     {{{3.0, 0.5, -1.0, 1.6, 3.9, 1.56, 0.4}, ObjectClass::kCar},
                      {{6.0, -2.0, -0.6, 0.6, 0.8, 1.73, -1.2}, ObjectClass::kPedestrian}},
                     mc.anchors),
      assign_targets(net.anchors(), {{{2.0, -1.0, -0.6, 0.6, 1.76, 1.73, 2.5}, ObjectClass::kCyclist}}, mc.anchors)};

  run("detection_loss", kOpTol, [&](std::mt19937_64& r) {
    return grad_check(
        [&](const Vs& in) { return detection_loss<double>({in[0], in[1], in[2]}, targets).total; },
        {random_tensor({2, 18, rows_h, cols_w}, r, -4, 1), random_tensor({2, 42, rows_h, cols_w}, r, -0.5, 0.5),
         random_tensor({2, 12, rows_h, cols_w}, r)},
        1e-6, r());
  });
  run("composed backbone-neck-head-loss", kComposedTol, [&](std::mt19937_64& r) {
    return grad_check([&](const Vs& in) { return detection_loss(net.forward_pseudo(in[0]).head, targets).total; },
                      {random_tensor({2, 4, mc.grid.height(), mc.grid.width()}, r, 0, 1)}, 1e-6, r());
  });
  return rows;
}

}  // namespace dpp
