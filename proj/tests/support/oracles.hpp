#pragma once

// Reference implementations used only by tests. They are written to be
// obviously correct rather than fast.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "densepillars/bev_eval.hpp"
#include "densepillars/detector.hpp"

namespace oracle {

inline bool inside_rect(const dpp::Box3D& b, double x, double y) {
  const double dx = x - b.cx, dy = y - b.cy;
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double u = c * dx + s * dy;   // along l
  const double v = -s * dx + c * dy;  // along w
  return std::abs(u) <= 0.5 * b.l && std::abs(v) <= 0.5 * b.w;
}

/// Monte-Carlo BEV IoU with `samples` uniform draws over the joint bounding
/// square of both boxes.
inline double monte_carlo_iou(const dpp::Box3D& a, const dpp::Box3D& b, int samples, std::uint64_t seed) {
  const double ra = 0.5 * std::hypot(a.w, a.l), rb = 0.5 * std::hypot(b.w, b.l);
  const double x0 = std::min(a.cx - ra, b.cx - rb), x1 = std::max(a.cx + ra, b.cx + rb);
  const double y0 = std::min(a.cy - ra, b.cy - rb), y1 = std::max(a.cy + ra, b.cy + rb);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(x0, x1), uy(y0, y1);
  long in_a = 0, in_b = 0, both = 0;
  for (int i = 0; i < samples; ++i) {
    const double x = ux(rng), y = uy(rng);
    const bool pa = inside_rect(a, x, y), pb = inside_rect(b, x, y);
    in_a += pa;
    in_b += pb;
    both += pa && pb;
  }
  const long uni = in_a + in_b - both;
  return uni == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(uni);
}

/// Jittered-grid Monte-Carlo BEV IoU: one uniform draw in each cell of an
/// n x n grid over the tight bounding rectangle of both boxes (n*n samples).
inline double stratified_iou(const dpp::Box3D& a, const dpp::Box3D& b, int n, std::uint64_t seed) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto* bx : {&a, &b}) {
    const double c = std::cos(bx->yaw), s = std::sin(bx->yaw);
    for (double su : {-0.5, 0.5})
      for (double sv : {-0.5, 0.5}) {
        const double x = bx->cx + su * bx->l * c - sv * bx->w * s;
        const double y = bx->cy + su * bx->l * s + sv * bx->w * c;
        x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
      }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double dx = (x1 - x0) / n, dy = (y1 - y0) / n;
  long in_a = 0, in_b = 0, both = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double x = x0 + (i + u(rng)) * dx, y = y0 + (j + u(rng)) * dy;
      const bool pa = inside_rect(a, x, y), pb = inside_rect(b, x, y);
      in_a += pa;
      in_b += pb;
      both += pa && pb;
    }
  const long uni = in_a + in_b - both;
  return uni == 0 ? 0.0 : static_cast<double>(both) / static_cast<double>(uni);
}

/// Greedy NMS by repeated selection of the best remaining candidate.
inline std::vector<std::size_t> nms(const std::vector<dpp::Detection>& d, double thr) {
  std::vector<bool> alive(d.size(), true);
  std::vector<std::size_t> kept;
  while (true) {
    std::size_t best = d.size();
    for (std::size_t i = 0; i < d.size(); ++i)
      if (alive[i] && (best == d.size() || d[i].score > d[best].score)) best = i;
    if (best == d.size()) break;
    kept.push_back(best);
    alive[best] = false;
    for (std::size_t i = 0; i < d.size(); ++i)
      if (alive[i] && d[i].cls == d[best].cls && dpp::rotated_iou_bev(d[best].box, d[i].box) > thr) alive[i] = false;
  }
  return kept;
}

/// Anchor labels from the full IoU matrix.
inline std::vector<int> assign_labels(const std::vector<dpp::Anchor>& anchors, const std::vector<dpp::LabeledBox>& gts,
                                      const dpp::AnchorConfig& cfg) {
  const std::size_t na = anchors.size(), ng = gts.size();
  std::vector<std::vector<double>> iou(na, std::vector<double>(ng, 0.0));
  for (std::size_t i = 0; i < na; ++i)
    for (std::size_t j = 0; j < ng; ++j)
      if (anchors[i].cls == gts[j].cls) iou[i][j] = dpp::rotated_iou_bev(anchors[i].box, gts[j].box);
  std::vector<int> label(na, dpp::kNegative);
  for (std::size_t i = 0; i < na; ++i) {
    if (ng == 0) continue;
    const auto it = std::max_element(iou[i].begin(), iou[i].end());
    const auto& c = cfg.of(anchors[i].cls);
    if (*it > 0 && *it >= c.match_iou)
      label[i] = static_cast<int>(it - iou[i].begin());
    else if (*it >= c.unmatch_iou)
      label[i] = dpp::kIgnore;
  }
  for (std::size_t j = 0; j < ng; ++j) {
    double best = 0.0;
    std::size_t arg = na;
    for (std::size_t i = 0; i < na; ++i)
      if (iou[i][j] > best) {
        best = iou[i][j];
        arg = i;
      }
    if (arg < na) label[arg] = static_cast<int>(j);
  }
  return label;
}

}  // namespace oracle
