#include "densepillars/bev_eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dpp {

namespace {

using Pt = std::array<double, 2>;

double cross(const Pt& o, const Pt& a, const Pt& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

double polygon_area(const std::vector<Pt>& poly) {
  double s = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Pt& p = poly[i];
    const Pt& q = poly[(i + 1) % poly.size()];
    s += p[0] * q[1] - q[0] * p[1];
  }
  return 0.5 * std::abs(s);
}

// Sutherland-Hodgman: keep the part of `subject` left of each clip edge.
std::vector<Pt> clip_convex(std::vector<Pt> subject, const std::array<Pt, 4>& clip) {
  for (std::size_t e = 0; e < clip.size() && !subject.empty(); ++e) {
    const Pt& a = clip[e];
    const Pt& b = clip[(e + 1) % clip.size()];
    std::vector<Pt> out;
    out.reserve(subject.size() + 2);
    for (std::size_t i = 0; i < subject.size(); ++i) {
      const Pt& p = subject[i];
      const Pt& q = subject[(i + 1) % subject.size()];
      const double dp = cross(a, b, p), dq = cross(a, b, q);
      if (dp >= 0) out.push_back(p);
      if ((dp >= 0) != (dq >= 0)) {
        const double t = dp / (dp - dq);
        out.push_back({p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])});
      }
    }
    subject = std::move(out);
  }
  return subject;
}

constexpr double kDegenerateArea = 1e-12;

double match_iou(const Box3D& a, const Box3D& b, IouMode mode) {
  return mode == IouMode::kBev ? rotated_iou_bev(a, b) : iou_3d(a, b);
}

struct MatchOutcome {
  std::vector<std::pair<double, bool>> scored;  // (score, true positive) in visit order
  std::int64_t n_gt = 0;
};

MatchOutcome match_class(const std::vector<EvalFrame>& frames, ObjectClass cls, double thr, IouMode mode) {
  struct Cand {
    double score;
    std::size_t frame, index;
  };
  std::vector<Cand> cands;
  MatchOutcome out;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t i = 0; i < frames[f].detections.size(); ++i)
      if (frames[f].detections[i].cls == cls) cands.push_back({frames[f].detections[i].score, f, i});
    for (const auto& g : frames[f].ground_truth) out.n_gt += g.cls == cls;
  }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.score > b.score; });
  std::vector<std::vector<bool>> used(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) used[f].assign(frames[f].ground_truth.size(), false);
  for (const auto& c : cands) {
    const auto& det = frames[c.frame].detections[c.index];
    const auto& gts = frames[c.frame].ground_truth;
    double best = -1.0;
    std::size_t best_j = gts.size();
    for (std::size_t j = 0; j < gts.size(); ++j) {
      if (gts[j].cls != cls || used[c.frame][j]) continue;
      const double iou = match_iou(det.box, gts[j].box, mode);
      if (iou >= thr && iou > best) {
        best = iou;
        best_j = j;
      }
    }
    if (best_j < gts.size()) used[c.frame][best_j] = true;
    out.scored.push_back({c.score, best_j < gts.size()});
  }
  return out;
}

}  // namespace

double bev_intersection_area(const Box3D& a, const Box3D& b) {
  if (a.w * a.l < kDegenerateArea || b.w * b.l < kDegenerateArea) return 0.0;
  const double ra = 0.5 * std::hypot(a.w, a.l), rb = 0.5 * std::hypot(b.w, b.l);
  if (std::hypot(a.cx - b.cx, a.cy - b.cy) > ra + rb) return 0.0;
  const auto ca = bev_corners(a);
  const auto cb = bev_corners(b);
  auto poly = clip_convex(std::vector<Pt>(ca.begin(), ca.end()), cb);
  return poly.size() < 3 ? 0.0 : polygon_area(poly);
}

double rotated_iou_bev(const Box3D& a, const Box3D& b) {
  const double area_a = a.w * a.l, area_b = b.w * b.l;
  if (area_a < kDegenerateArea || area_b < kDegenerateArea) return 0.0;
  const double inter = bev_intersection_area(a, b);
  const double uni = area_a + area_b - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

double iou_3d(const Box3D& a, const Box3D& b) {
  const double za0 = a.cz - 0.5 * a.h, za1 = a.cz + 0.5 * a.h;
  const double zb0 = b.cz - 0.5 * b.h, zb1 = b.cz + 0.5 * b.h;
  const double dz = std::min(za1, zb1) - std::max(za0, zb0);
  if (dz <= 0) return 0.0;
  const double inter = bev_intersection_area(a, b) * dz;
  const double uni = a.w * a.l * a.h + b.w * b.l * b.h - inter;
  return uni > 0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

std::vector<std::size_t> nms_bev(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  std::vector<std::size_t> kept;
  for (auto i : order) {
    bool suppressed = false;
    for (auto k : kept) {
      if (dets[k].cls == dets[i].cls && rotated_iou_bev(dets[k].box, dets[i].box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

std::optional<double> ap_r40(const std::vector<EvalFrame>& frames, ObjectClass cls, double iou_threshold,
                             IouMode mode, int recall_points) {
  const auto m = match_class(frames, cls, iou_threshold, mode);
  if (m.n_gt == 0) return std::nullopt;
  // (tp, precision) after each detection.
  std::vector<std::pair<std::int64_t, double>> curve;
  std::int64_t tp = 0;
  for (std::size_t i = 0; i < m.scored.size(); ++i) {
    tp += m.scored[i].second;
    curve.push_back({tp, static_cast<double>(tp) / static_cast<double>(i + 1)});
  }
  double sum = 0.0;
  for (int r = 1; r <= recall_points; ++r) {
    double best = 0.0;
    for (const auto& [t, prec] : curve) {
      // recall t / n_gt >= r / recall_points, in integers.
      if (t * recall_points >= static_cast<std::int64_t>(r) * m.n_gt) best = std::max(best, prec);
    }
    sum += best;
  }
  return sum / recall_points;
}

std::optional<double> recall_at(const std::vector<EvalFrame>& frames, ObjectClass cls, double iou_threshold,
                                IouMode mode) {
  const auto m = match_class(frames, cls, iou_threshold, mode);
  if (m.n_gt == 0) return std::nullopt;
  std::int64_t tp = 0;
  for (const auto& s : m.scored) tp += s.second;
  return static_cast<double>(tp) / static_cast<double>(m.n_gt);
}

EvalResult evaluate_set(const std::vector<EvalFrame>& frames, const EvalConfig& cfg) {
  EvalResult res;
  double sum = 0.0;
  int n = 0;
  for (auto c : kAllClasses) {
    auto ap = ap_r40(frames, c, cfg.threshold(c), cfg.mode, cfg.recall_points);
    res.ap[static_cast<std::size_t>(c)] = ap;
    if (ap) {
      sum += *ap;
      ++n;
    } else {
      res.warnings.push_back(std::string(class_name(c)) + ": no ground truth, excluded from mAP");
    }
  }
  res.mean_ap = n > 0 ? sum / n : 0.0;
  return res;
}

}  // namespace dpp
