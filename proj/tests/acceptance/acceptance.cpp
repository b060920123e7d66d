// One PASS/FAIL line per acceptance criterion. Arguments select criteria
// (e.g. `acceptance 1 2 6`); no arguments runs all eight.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "densepillars/commands.hpp"
#include "densepillars/errors.hpp"
#include "oracles.hpp"

using namespace dpp;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

bool within(double got, double target, double rel) { return std::abs(got - target) <= rel * target; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1. analyze output against the published cost table
Outcome table_costs() {
  const auto t0 = std::chrono::steady_clock::now();
  std::ostringstream sink;
  auto rep = cmd_analyze(RunConfig{}, std::nullopt, sink);
  const double secs = seconds_since(t0);
  const auto& b = rep.baseline;
  const auto& d = rep.dense;
  struct Check {
    const char* what;
    double got, target, tol;
  };
  const Check checks[] = {
      {"baseline.backbone params", b.row("backbone").cost.params / 1e6, 4.21, 0.03},
      {"baseline.backbone MACs", b.row("backbone").cost.macs / 1e9, 29.71, 0.05},
      {"neck params", b.row("neck").cost.params / 1e6, 0.6, 0.03},
      {"neck MACs", b.row("neck").cost.macs / 1e9, 3.13, 0.05},
      {"head params", b.row("head").cost.params / 1e6, 0.03, 0.05},
      {"head MACs", b.row("head").cost.macs / 1e9, 1.49, 0.05},
      {"dense.backbone params", d.row("backbone").cost.params / 1e6, 0.47, 0.03},
      {"dense.backbone MACs", d.row("backbone").cost.macs / 1e9, 19.86, 0.05},
  };
  Outcome o{secs < 1.0, ""};
  std::ostringstream s;
  for (const auto& c : checks) {
    const bool ok = within(c.got, c.target, c.tol);
    o.pass = o.pass && ok;
    s << c.what << " " << fmt("%.4g", c.got);
    if (!ok)
      s << " (target " << c.target << " +-" << c.tol * 100 << "%, off by " << fmt("%.1f%%", 100 * (c.got - c.target) / c.target)
        << ")";
    s << "; ";
  }
  s << fmt("%.3f s", secs);
  o.detail = s.str();
  return o;
}

// 2. backbone ratios
Outcome ratios() {
  const auto t0 = std::chrono::steady_clock::now();
  auto rep = component_report(ModelConfig{});
  const double secs = seconds_since(t0);
  const bool ok = rep.param_ratio >= 8.5 && rep.param_ratio <= 9.5 && rep.mac_ratio >= 1.45 && rep.mac_ratio <= 1.6;
  return {ok && secs < 1.0, "param ratio " + fmt("%.3f", rep.param_ratio) + ", MAC ratio " + fmt("%.3f", rep.mac_ratio)};
}

// 3. swapping the backbone changes nothing downstream
Outcome plug_and_play() {
  const auto t0 = std::chrono::steady_clock::now();
  ResolvedConfig dense_rc;
  dense_rc.set("seed", "7", ConfigSource::kFlag);
  ResolvedConfig base_rc = dense_rc;
  base_rc.set("backbone.kind", "baseline", ConfigSource::kFlag);
  base_rc.validate();

  // every differing config line must be in the backbone section
  std::istringstream ta(dense_rc.to_text()), tb(base_rc.to_text());
  int outside = 0, changed = 0;
  for (std::string la, lb; std::getline(ta, la) && std::getline(tb, lb);)
    if (la != lb) {
      ++changed;
      if (la.rfind("backbone.", 0) != 0) ++outside;
    }

  PointPillarsNet<float> dense(dense_rc.config().model), base(base_rc.config().model);
  dense.set_mode(NormMode::kEval);
  base.set_mode(NormMode::kEval);

  // neck and head weights are identical across the swap
  bool same_weights = true;
  auto pd = dense.parameters(), pb = base.parameters();
  int shared = 0;
  for (const auto& a : pd.params) {
    if (a.name.rfind("neck.", 0) != 0 && a.name.rfind("head.", 0) != 0 && a.name.rfind("encoder.", 0) != 0) continue;
    bool found = false;
    for (const auto& b : pb.params)
      if (b.name == a.name) {
        found = true;
        auto x = a.var.value().data(), y = b.var.value().data();
        same_weights = same_weights && std::equal(x.begin(), x.end(), y.begin(), y.end());
      }
    same_weights = same_weights && found;
    ++shared;
  }

  auto scene = synth_scene(synth_options(dense_rc.config(), 11));
  PillarBatch batch = pillarize(scene.cloud, dense_rc.config().model.grid, {11, true});
  decorate(batch, dense_rc.config().model.grid);
  NoGradGuard ng;
  auto td = dense.forward_trace(batch, 1);
  auto tb2 = base.forward_trace(batch, 1);
  bool shapes = td.pseudo_image.shape() == tb2.pseudo_image.shape() && td.fused.shape() == tb2.fused.shape() &&
                td.head.cls.shape() == tb2.head.cls.shape() && td.head.box.shape() == tb2.head.box.shape() &&
                td.head.dir.shape() == tb2.head.dir.shape();
  for (int i = 0; i < 3; ++i) shapes = shapes && td.taps[i].shape() == tb2.taps[i].shape();
  const double secs = seconds_since(t0);
  const bool ok = outside == 0 && changed > 0 && same_weights && shared > 0 && shapes && secs < 60.0;
  std::ostringstream s;
  s << "config lines changed " << changed << " (outside backbone " << outside << "), shared weights "
    << (same_weights ? "identical" : "DIFFER") << ", stage shapes " << (shapes ? "identical" : "DIFFER") << ", "
    << fmt("%.1f s", secs);
  return {ok, s.str()};
}

template <typename T>
std::int64_t allocated(Backbone<T>& b) {
  ParameterSet<T> ps;
  b.collect("b", ps);
  return ps.trainable_count();
}

// 4. analytic parameter counts match allocation
Outcome analyzer_consistency() {
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<int> layers(1, 6), growth(1, 40), ch(1, 96), mode(0, 2), ds(0, 1);
  int matched = 0, total = 0;
  for (int t = 0; t < 20; ++t) {
    DenseBackboneSpec d;
    for (int b = 0; b < 3; ++b) {
      d.layers_per_block[b] = layers(rng);
      d.transition_out_channels[b] = ch(rng);
    }
    const int m = mode(rng);
    d.growth = m == 0 ? GrowthSchedule::fixed(growth(rng)) : m == 1 ? GrowthSchedule::doubling(growth(rng))
                                                                    : GrowthSchedule::table_matched();
    d.input_channels = ch(rng);
    d.downsample = ds(rng) ? Downsample::kStridedConv : Downsample::kAvgPool;
    DenseBackbone<float> dn(d, 1);
    matched += count_params(d) == allocated<float>(dn);

    BaselineBackboneSpec s;
    for (int b = 0; b < 3; ++b) {
      s.layers_per_block[b] = layers(rng) - 1;
      s.channels[b] = ch(rng);
    }
    s.input_channels = ch(rng);
    BaselineBackbone<float> bn(s, 1);
    matched += count_params(s) == allocated<float>(bn);
    total += 2;
  }
  return {matched == total, std::to_string(matched) + "/" + std::to_string(total) + " random specs exact"};
}

// 5. finite-difference gradient suite
Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  auto rows = run_gradient_suite(10, 2024);
  const double secs = seconds_since(t0);
  bool ok = secs < 300.0;
  double worst_op = 0, worst_composed = 0;
  std::string failed;
  for (const auto& r : rows) {
    ok = ok && r.passed() && r.points == 10;
    if (!r.passed()) failed += " " + r.name;
    (r.tolerance > 1e-5 ? worst_composed : worst_op) =
        std::max(r.tolerance > 1e-5 ? worst_composed : worst_op, r.max_rel_error);
  }
  std::ostringstream s;
  s << rows.size() << " checks, worst op " << fmt("%.2e", worst_op) << ", composed " << fmt("%.2e", worst_composed)
    << ", " << fmt("%.0f s", secs);
  if (!failed.empty()) s << ", failed:" << failed;
  return {ok, s.str()};
}

Box3D random_box(std::mt19937_64& rng, double spread) {
  std::uniform_real_distribution<double> pos(-spread, spread), size(0.5, 4.0), yaw(-std::numbers::pi, std::numbers::pi);
  return {pos(rng), pos(rng), 0.0, size(rng), size(rng), 1.5, yaw(rng)};
}

// 6. geometry against brute-force oracles
Outcome geometry() {
  std::mt19937_64 rng(606);
  double worst_mc = 0;
  for (int t = 0; t < 100; ++t) {
    const Box3D a = random_box(rng, 1.5), b = random_box(rng, 1.5);
    worst_mc = std::max(worst_mc, std::abs(rotated_iou_bev(a, b) - oracle::stratified_iou(a, b, 1000, 7000 + t)));
  }
  const Box3D sq{0, 0, 0, 1, 1, 1, 0}, rot{0, 0, 0, 1, 1, 1, std::numbers::pi / 4};
  const double diamond = std::abs(rotated_iou_bev(sq, rot) - 1.0 / std::numbers::sqrt2);

  int nms_ok = 0;
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> cls(0, 2), count(0, 14);
  for (int t = 0; t < 200; ++t) {
    std::vector<Detection> d;
    const int n = count(rng);
    for (int i = 0; i < n; ++i)
      d.push_back({random_box(rng, 3.0), static_cast<ObjectClass>(cls(rng)), std::round(u(rng) * 8) / 8});
    const double thr = t % 3 == 0 ? 0.01 : t % 3 == 1 ? 0.3 : 0.6;
    nms_ok += nms_bev(d, thr) == oracle::nms(d, thr);
  }

  GridSpec g;
  g.x_min = 0;
  g.x_max = 5.12;
  g.y_min = -2.56;
  g.y_max = 2.56;
  AnchorConfig ac;
  const auto anchors = generate_anchors(16, 16, g, ac);
  int assign_ok = 0;
  std::uniform_real_distribution<double> ux(0.5, 4.62), uy(-2.06, 2.06), yaw(-std::numbers::pi, std::numbers::pi),
      jit(0.85, 1.15);
  for (int t = 0; t < 200; ++t) {
    std::vector<LabeledBox> gts;
    const int n = t % 5;
    for (int i = 0; i < n; ++i) {
      const auto c = static_cast<ObjectClass>(cls(rng));
      const auto& sz = ac.of(c).size;
      gts.push_back({{ux(rng), uy(rng), ac.of(c).z_center, sz[0] * jit(rng), sz[1] * jit(rng), sz[2], yaw(rng)}, c});
    }
    assign_ok += assign_targets(anchors, gts, ac).label == oracle::assign_labels(anchors, gts, ac);
  }

  LabeledBox g1{{0, 0, 0, 1.6, 3.9, 1.5, 0}, ObjectClass::kCar};
  LabeledBox g2{{10, 0, 0, 1.6, 3.9, 1.5, 0}, ObjectClass::kCar};
  Detection far{{30, 30, 0, 1.6, 3.9, 1.5, 0}, ObjectClass::kCar, 0.9};
  std::vector<EvalFrame> perfect{{{{g1.box, g1.cls, 1.0}, {g2.box, g2.cls, 1.0}}, {g1, g2}}};
  std::vector<EvalFrame> none{{{far}, {g1, g2}}};
  std::vector<EvalFrame> half{{{{g1.box, g1.cls, 0.9}}, {g1, g2}}};
  const double ap1 = ap_r40(perfect, ObjectClass::kCar, 0.7).value_or(-1);
  const double ap0 = ap_r40(none, ObjectClass::kCar, 0.7).value_or(-1);
  const double aph = ap_r40(half, ObjectClass::kCar, 0.7).value_or(-1);
  const bool ap_ok = std::abs(ap1 - 1.0) < 1e-12 && ap0 == 0.0 && std::abs(aph - 0.5) < 1e-12;

  const bool ok = worst_mc <= 2e-3 && diamond <= 1e-9 && nms_ok == 200 && assign_ok == 200 && ap_ok;
  std::ostringstream s;
  s << "IoU vs 1e6-sample MC worst " << fmt("%.2e", worst_mc) << ", 45deg error " << fmt("%.1e", diamond) << ", NMS "
    << nms_ok << "/200, assign " << assign_ok << "/200, AP " << ap1 << "/" << ap0 << "/" << aph;
  return {ok, s.str()};
}

// 7. overfit on synthetic scenes
Outcome overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  ResolvedConfig rc;
  rc.load_text(desk_config_text(), "desk");
  rc.validate();
  const RunConfig& cfg = rc.config();
  auto scenes = make_synthetic_set(cfg, 8);
  PointPillarsNet<float> net(cfg.model);
  OptimizerState<float> opt;
  opt.options.lr = cfg.train.lr;
  opt.options.weight_decay = cfg.train.weight_decay;
  auto hist = train_model(net, opt, scenes, cfg);
  if (hist.empty()) return {false, "no steps"};

  // final loss: mean over the last pass through all scenes
  const std::size_t per_epoch = (scenes.size() + cfg.train.batch_size - 1) / cfg.train.batch_size;
  double tail = 0;
  for (std::size_t i = hist.size() - per_epoch; i < hist.size(); ++i) tail += hist[i].total;
  tail /= static_cast<double>(per_epoch);
  const double initial = hist.front().total;

  std::vector<EvalFrame> frames;
  for (const auto& sc : scenes) frames.push_back({detect(net, sc.cloud, cfg.infer), sc.boxes});
  bool recall_ok = true;
  std::ostringstream s;
  s << hist.size() << " steps, loss " << fmt("%.4g", initial) << " -> " << fmt("%.4g", tail) << " ("
    << fmt("%.1f%%", 100.0 * tail / initial) << "), recall@BEV0.5";
  for (auto c : kAllClasses) {
    auto r = recall_at(frames, c, 0.5, IouMode::kBev);
    if (!r) continue;
    recall_ok = recall_ok && *r >= 0.8;
    s << " " << class_name(c) << " " << fmt("%.3f", *r);
  }
  const double secs = seconds_since(t0);
  s << ", " << fmt("%.0f s", secs);
  return {tail < 0.1 * initial && recall_ok && hist.size() <= 500 && secs <= 1800.0, s.str()};
}

// 8. growth-schedule ordering
Outcome growth_ordering() {
  auto p = [](GrowthSchedule g) {
    DenseBackboneSpec d;
    d.growth = g;
    return count_params(d);
  };
  const auto f16 = p(GrowthSchedule::fixed(16)), f32 = p(GrowthSchedule::fixed(32)), f64 = p(GrowthSchedule::fixed(64));
  const auto tm = p(GrowthSchedule::table_matched()), d32 = p(GrowthSchedule::doubling(32));
  std::ostringstream s;
  s << "fixed16 " << f16 << " < fixed32 " << f32 << " < fixed64 " << f64 << "; table " << tm << " < doubling32 " << d32;
  return {f16 < f32 && f32 < f64 && tm < d32, s.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"cost table reproduction", table_costs},
      {"dense/baseline ratios", ratios},
      {"plug-and-play backbone swap", plug_and_play},
      {"analyzer matches allocation", analyzer_consistency},
      {"gradient suite", gradient_suite},
      {"geometry oracles", geometry},
      {"overfit smoke test", overfit},
      {"growth-schedule ordering", growth_ordering},
  };
  std::set<int> pick;
  for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));
  int failures = 0;
  for (int i = 0; i < 8; ++i) {
    if (!pick.empty() && !pick.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
