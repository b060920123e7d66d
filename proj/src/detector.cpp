#include "densepillars/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "densepillars/errors.hpp"

namespace dpp {

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// Loss and d(loss)/d(logit) of the sigmoid focal loss.
std::pair<double, double> focal_with_grad(double x, int t, double alpha, double gamma) {
  const double p = sigmoid(x);
  const double pt = t ? p : 1.0 - p;
  const double log_pt = t ? -softplus(-x) : -softplus(x);
  const double a = t ? alpha : 1.0 - alpha;
  const double q = 1.0 - pt;
  const double qg = std::pow(q, gamma);
  const double loss = -a * qg * log_pt;
  // d/dx: dpt/dx = s p (1-p), s = +-1
  const double s = t ? 1.0 : -1.0;
  const double dpt = s * p * (1.0 - p);
  const double qg1 = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0);
  // d loss / d pt = a (qg1 log pt - qg / pt); qg / pt * dpt simplified to avoid pt = 0
  const double dl = a * (qg1 * log_pt * dpt - qg * s * (1.0 - pt));
  return {loss, dl};
}

std::pair<double, double> smooth_l1_with_grad(double r, double beta) {
  const double ar = std::abs(r);
  if (ar < beta) return {0.5 * r * r / beta, r / beta};
  return {ar - 0.5 * beta, r > 0 ? 1.0 : -1.0};
}

void check_head_shapes(const Shape& s, std::int64_t per_anchor, const char* what) {
  if (s.size() != 4 || s[1] != AnchorConfig::kPerCell * per_anchor)
    throw InvariantError(std::string("head output ") + what + " has shape " + shape_str(s));
}

}  // namespace

std::vector<Anchor> generate_anchors(std::int64_t rows, std::int64_t cols, const GridSpec& grid,
                                     const AnchorConfig& cfg) {
  std::vector<Anchor> out;
  out.reserve(static_cast<std::size_t>(rows * cols * AnchorConfig::kPerCell));
  const double sx = grid.pillar_x * cfg.feature_stride, sy = grid.pillar_y * cfg.feature_stride;
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) {
      const double cx = grid.x_min + (static_cast<double>(c) + 0.5) * sx;
      const double cy = grid.y_min + (static_cast<double>(r) + 0.5) * sy;
      for (auto cls : kAllClasses) {
        const auto& a = cfg.of(cls);
        for (double rot : cfg.rotations) out.push_back({{cx, cy, a.z_center, a.size[0], a.size[1], a.size[2], rot}, cls});
      }
    }
  return out;
}

std::array<double, kBoxCode> encode_box(const Box3D& g, const Box3D& a) {
  const double diag = std::hypot(a.w, a.l);
  return {(g.cx - a.cx) / diag, (g.cy - a.cy) / diag, (g.cz - a.cz) / a.h, std::log(g.w / a.w),
          std::log(g.l / a.l),  std::log(g.h / a.h),  g.yaw - a.yaw};
}

Box3D decode_box(std::span<const double, kBoxCode> d, const Box3D& a) {
  const double diag = std::hypot(a.w, a.l);
  return {a.cx + d[0] * diag, a.cy + d[1] * diag, a.cz + d[2] * a.h, a.w * std::exp(d[3]),
          a.l * std::exp(d[4]), a.h * std::exp(d[5]), a.yaw + d[6]};
}

TargetAssignment assign_targets(const std::vector<Anchor>& anchors, const std::vector<LabeledBox>& gts,
                                const AnchorConfig& cfg) {
  TargetAssignment t;
  const std::size_t na = anchors.size(), ng = gts.size();
  t.label.assign(na, kNegative);
  t.regression.assign(na, {});
  t.direction.assign(na, 0);
  for (const auto& g : gts) t.gt_class.push_back(g.cls);
  if (ng == 0) return t;

  std::vector<double> best_iou(na, 0.0);
  std::vector<int> best_gt(na, -1);
  std::vector<double> gt_best(ng, 0.0);
  std::vector<std::size_t> gt_best_anchor(ng, na);
  std::vector<double> gt_radius(ng);
  for (std::size_t j = 0; j < ng; ++j) gt_radius[j] = 0.5 * std::hypot(gts[j].box.w, gts[j].box.l);

  for (std::size_t i = 0; i < na; ++i) {
    const auto& a = anchors[i];
    const double ra = 0.5 * std::hypot(a.box.w, a.box.l);
    for (std::size_t j = 0; j < ng; ++j) {
      if (gts[j].cls != a.cls) continue;
      if (std::hypot(a.box.cx - gts[j].box.cx, a.box.cy - gts[j].box.cy) > ra + gt_radius[j]) continue;
      const double iou = rotated_iou_bev(a.box, gts[j].box);
      if (iou > best_iou[i]) {
        best_iou[i] = iou;
        best_gt[i] = static_cast<int>(j);
      }
      if (iou > gt_best[j]) {
        gt_best[j] = iou;
        gt_best_anchor[j] = i;
      }
    }
  }
  for (std::size_t i = 0; i < na; ++i) {
    const auto& c = cfg.of(anchors[i].cls);
    if (best_gt[i] >= 0 && best_iou[i] >= c.match_iou)
      t.label[i] = best_gt[i];
    else if (best_iou[i] >= c.unmatch_iou)
      t.label[i] = kIgnore;
  }
  for (std::size_t j = 0; j < ng; ++j)
    if (gt_best_anchor[j] < na) t.label[gt_best_anchor[j]] = static_cast<int>(j);

  for (std::size_t i = 0; i < na; ++i) {
    if (t.label[i] < 0) continue;
    const auto& g = gts[static_cast<std::size_t>(t.label[i])].box;
    t.regression[i] = encode_box(g, anchors[i].box);
    t.direction[i] = g.yaw >= 0 ? 1 : 0;
    ++t.num_positive;
  }
  return t;
}

template <typename T>
Fpn<T>::Fpn(const NeckSpec& spec, std::uint64_t seed) : spec_(spec) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < 3; ++i) {
    const int s = spec_.upsample_strides[i];
    if (s < 1) throw ConfigError("neck: upsample strides must be >= 1");
    deconv_[i] = fan_out_normal<T>({spec_.in_channels[i], spec_.out_channels[i], s, s},
                                   static_cast<std::int64_t>(spec_.out_channels[i]) * s * s, rng);
    bn_[i] = BatchNormParams<T>::create(spec_.out_channels[i]);
  }
}

template <typename T>
Var<T> Fpn<T>::forward(const FeatureTaps<T>& taps) {
  std::vector<Var<T>> ups;
  for (std::size_t i = 0; i < 3; ++i) {
    const Shape& s = taps[i].shape();
    if (s.size() != 4 || s[1] != spec_.in_channels[i])
      throw ConfigError("neck: tap " + std::to_string(i) + " expected " + std::to_string(spec_.in_channels[i]) +
                        " channels, got " + shape_str(s));
    ups.push_back(relu(batch_norm(conv_transpose2d(taps[i], deconv_[i], spec_.upsample_strides[i]), bn_[i])));
    if (i > 0 && (ups[i].shape()[2] != ups[0].shape()[2] || ups[i].shape()[3] != ups[0].shape()[3]))
      throw InvariantError("neck: upsampled taps disagree: " + shape_str(ups[0].shape()) + " vs " +
                           shape_str(ups[i].shape()));
  }
  return channel_concat(ups);
}

template <typename T>
void Fpn<T>::set_mode(NormMode mode) {
  for (auto& b : bn_) b.mode = mode;
}

template <typename T>
void Fpn<T>::collect(const std::string& prefix, ParameterSet<T>& out) {
  for (std::size_t i = 0; i < 3; ++i) {
    out.add(prefix + ".up" + std::to_string(i) + ".weight", deconv_[i]);
    out.add_norm(prefix + ".up" + std::to_string(i) + ".bn", bn_[i]);
  }
}

template <typename T>
AnchorHead<T>::AnchorHead(int in_channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto make = [&](int out, double bias) {
    Conv2dParams<T> p;
    p.weight = normal_init<T>({out, in_channels, 1, 1}, 0.01, rng);
    p.bias = Var<T>(Tensor<T>({out}, static_cast<T>(bias)), true);
    return p;
  };
  const double prior = 0.01;
  cls_ = make(AnchorConfig::kPerCell * kNumClasses, -std::log((1.0 - prior) / prior));
  box_ = make(AnchorConfig::kPerCell * kBoxCode, 0.0);
  dir_ = make(AnchorConfig::kPerCell * kDirBins, 0.0);
}

template <typename T>
HeadOutputs<T> AnchorHead<T>::forward(const Var<T>& fused) {
  return {conv2d(fused, cls_), conv2d(fused, box_), conv2d(fused, dir_)};
}

template <typename T>
void AnchorHead<T>::collect(const std::string& prefix, ParameterSet<T>& out) {
  out.add(prefix + ".cls.weight", cls_.weight);
  out.add(prefix + ".cls.bias", *cls_.bias);
  out.add(prefix + ".box.weight", box_.weight);
  out.add(prefix + ".box.bias", *box_.bias);
  out.add(prefix + ".dir.weight", dir_.weight);
  out.add(prefix + ".dir.bias", *dir_.bias);
}

double sigmoid_focal(double logit, int target, double alpha, double gamma) {
  return focal_with_grad(logit, target, alpha, gamma).first;
}

template <typename T>
LossOutput<T> detection_loss(const HeadOutputs<T>& out, const std::vector<TargetAssignment>& targets,
                             const LossWeights& w) {
  const Shape& cs = out.cls.shape();
  check_head_shapes(cs, kNumClasses, "cls");
  check_head_shapes(out.box.shape(), kBoxCode, "box");
  check_head_shapes(out.dir.shape(), kDirBins, "dir");
  const std::int64_t n = cs[0], h = cs[2], wd = cs[3], hw = h * wd;
  constexpr std::int64_t A = AnchorConfig::kPerCell;
  if (static_cast<std::int64_t>(targets.size()) != n)
    throw InvariantError("detection_loss: " + std::to_string(targets.size()) + " target sets for batch of " +
                         std::to_string(n));
  for (const auto& t : targets)
    if (static_cast<std::int64_t>(t.label.size()) != hw * A)
      throw InvariantError("detection_loss: target anchor count does not match the head grid");

  std::int64_t npos = 0;
  for (const auto& t : targets) npos += t.num_positive;
  const double norm = 1.0 / static_cast<double>(std::max<std::int64_t>(npos, 1));

  const T* cls = out.cls.value().ptr();
  const T* box = out.box.value().ptr();
  const T* dir = out.dir.value().ptr();
  Tensor<T> gcls(cs), gbox(out.box.shape()), gdir(out.dir.shape());
  double l_cls = 0, l_loc = 0, l_dir = 0;

  for (std::int64_t b = 0; b < n; ++b) {
    const auto& t = targets[static_cast<std::size_t>(b)];
    for (std::int64_t cell = 0; cell < hw; ++cell)
      for (std::int64_t a = 0; a < A; ++a) {
        const std::size_t ai = static_cast<std::size_t>(cell * A + a);
        const int label = t.label[ai];
        if (label == kIgnore) continue;
        const int pos_cls = label >= 0 ? static_cast<int>(t.gt_class[static_cast<std::size_t>(label)]) : -1;
        for (int k = 0; k < kNumClasses; ++k) {
          const std::int64_t idx = ((b * A * kNumClasses) + a * kNumClasses + k) * hw + cell;
          const auto [l, g] = focal_with_grad(static_cast<double>(cls[idx]), k == pos_cls, w.focal_alpha, w.focal_gamma);
          l_cls += l;
          gcls[idx] = static_cast<T>(w.cls * norm * g);
        }
        if (label < 0) continue;
        const auto& reg = t.regression[ai];
        for (int j = 0; j < kBoxCode; ++j) {
          const std::int64_t idx = ((b * A * kBoxCode) + a * kBoxCode + j) * hw + cell;
          const double p = static_cast<double>(box[idx]);
          double r = p - reg[static_cast<std::size_t>(j)], dr = 1.0;
          if (j == kBoxCode - 1) {
            dr = std::cos(r);
            r = std::sin(r);
          }
          const auto [l, g] = smooth_l1_with_grad(r, w.smooth_l1_beta);
          l_loc += l;
          gbox[idx] = static_cast<T>(w.loc * norm * g * dr);
        }
        const std::int64_t i0 = ((b * A * kDirBins) + a * kDirBins) * hw + cell, i1 = i0 + hw;
        const double z0 = static_cast<double>(dir[i0]), z1 = static_cast<double>(dir[i1]);
        const double m = std::max(z0, z1);
        const double lse = m + std::log(std::exp(z0 - m) + std::exp(z1 - m));
        const int td = t.direction[ai];
        l_dir += lse - (td ? z1 : z0);
        const double p1 = std::exp(z1 - lse);
        gdir[i0] = static_cast<T>(w.dir * norm * ((1.0 - p1) - (td == 0 ? 1.0 : 0.0)));
        gdir[i1] = static_cast<T>(w.dir * norm * (p1 - (td == 1 ? 1.0 : 0.0)));
      }
  }

  LossOutput<T> res;
  res.cls = w.cls * norm * l_cls;
  res.loc = w.loc * norm * l_loc;
  res.dir = w.dir * norm * l_dir;
  res.num_positive = static_cast<int>(npos);
  Tensor<T> total({}, static_cast<T>(res.cls + res.loc + res.dir));
  Var<T> c = out.cls, bx = out.box, d = out.dir;
  res.total = Var<T>::from_op(std::move(total), {c, bx, d},
                              [c, bx, d, gcls = std::move(gcls), gbox = std::move(gbox),
                               gdir = std::move(gdir)](Node<T>& self) {
                                const T up = self.grad[0];
                                auto acc = [up](const Var<T>& v, const Tensor<T>& g) {
                                  if (!v.requires_grad()) return;
                                  T* dst = v.node()->grad_buffer().ptr();
                                  for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += up * g[i];
                                };
                                acc(c, gcls);
                                acc(bx, gbox);
                                acc(d, gdir);
                              });
  return res;
}

double direction_corrected_yaw(double yaw, int dir_label) {
  const double pi = std::numbers::pi;
  const double r = yaw - std::floor(yaw / pi) * pi;  // [0, pi)
  return wrap_angle(dir_label ? r : r - pi);
}

template <typename T>
std::vector<Detection> postprocess(const HeadOutputs<T>& out, std::int64_t frame, const std::vector<Anchor>& anchors,
                                   const PostprocessOptions& opts) {
  const Shape& cs = out.cls.shape();
  check_head_shapes(cs, kNumClasses, "cls");
  constexpr std::int64_t A = AnchorConfig::kPerCell;
  const std::int64_t hw = cs[2] * cs[3];
  if (frame < 0 || frame >= cs[0]) throw InvariantError("postprocess: frame index out of range");
  if (static_cast<std::int64_t>(anchors.size()) != hw * A)
    throw InvariantError("postprocess: anchor count does not match the head grid");
  const T* cls = out.cls.value().ptr();
  const T* box = out.box.value().ptr();
  const T* dir = out.dir.value().ptr();

  struct Cand {
    double score;
    std::int64_t cell, a;
    int k;
  };
  std::vector<Cand> cands;
  for (std::int64_t cell = 0; cell < hw; ++cell)
    for (std::int64_t a = 0; a < A; ++a)
      for (int k = 0; k < kNumClasses; ++k) {
        const double s = sigmoid(static_cast<double>(cls[((frame * A * kNumClasses) + a * kNumClasses + k) * hw + cell]));
        if (s > opts.score_threshold) cands.push_back({s, cell, a, k});
      }
  std::stable_sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) { return x.score > y.score; });
  if (static_cast<int>(cands.size()) > opts.pre_nms_top) cands.resize(static_cast<std::size_t>(opts.pre_nms_top));

  std::vector<Detection> dets;
  dets.reserve(cands.size());
  for (const auto& c : cands) {
    std::array<double, kBoxCode> d{};
    for (int j = 0; j < kBoxCode; ++j)
      d[static_cast<std::size_t>(j)] = static_cast<double>(box[((frame * A * kBoxCode) + c.a * kBoxCode + j) * hw + c.cell]);
    const auto& anchor = anchors[static_cast<std::size_t>(c.cell * A + c.a)];
    Box3D b = decode_box(d, anchor.box);
    const std::int64_t i0 = ((frame * A * kDirBins) + c.a * kDirBins) * hw + c.cell;
    const int label = dir[i0 + hw] > dir[i0] ? 1 : 0;
    b.yaw = direction_corrected_yaw(b.yaw, label);
    dets.push_back({b, static_cast<ObjectClass>(c.k), c.score});
  }
  std::vector<Detection> kept;
  for (auto i : nms_bev(dets, opts.nms_iou)) {
    if (static_cast<int>(kept.size()) >= opts.max_detections) break;
    kept.push_back(dets[i]);
  }
  return kept;
}

template <typename T>
PointPillarsNet<T>::PointPillarsNet(const ModelConfig& cfg)
    : cfg_(cfg),
      encoder_((cfg.grid.validate(), cfg.grid.feature_channels), cfg.seed * 4 + 1),
      backbone_(make_backbone<T>(cfg.backbone, cfg.seed * 4 + 2)),
      neck_(cfg.neck, cfg.seed * 4 + 3),
      head_(cfg.neck.fused_channels(), cfg.seed * 4 + 4) {
  if (cfg_.backbone.out_channels() != cfg_.neck.in_channels)
    throw ConfigError("model: backbone tap channels do not match the neck inputs");
  const int in = cfg_.backbone.kind == BackboneKind::kDense ? cfg_.backbone.dense.input_channels
                                                            : cfg_.backbone.baseline.input_channels;
  if (in != cfg_.grid.feature_channels) throw ConfigError("model: backbone input channels differ from pillar features");
  if (cfg_.grid.height() % cfg_.anchors.feature_stride != 0 || cfg_.grid.width() % cfg_.anchors.feature_stride != 0)
    throw ConfigError("model: grid must be divisible by the feature stride");
  anchors_ = generate_anchors(feature_rows(), feature_cols(), cfg_.grid, cfg_.anchors);
}

template <typename T>
typename PointPillarsNet<T>::Trace PointPillarsNet<T>::forward_pseudo(const Var<T>& pseudo_image) {
  Trace tr;
  tr.pseudo_image = pseudo_image;
  tr.taps = backbone_->forward(pseudo_image);
  tr.fused = neck_.forward(tr.taps);
  if (tr.fused.shape()[2] != feature_rows() || tr.fused.shape()[3] != feature_cols())
    throw InvariantError("model: head grid " + shape_str(tr.fused.shape()) + " does not match the anchor grid");
  tr.head = head_.forward(tr.fused);
  return tr;
}

template <typename T>
typename PointPillarsNet<T>::Trace PointPillarsNet<T>::forward_trace(const PillarBatch& batch,
                                                                     std::int64_t batch_size) {
  auto feats = encoder_.forward(batch);
  auto pseudo = scatter_to_pseudo_image(feats, batch.coords, batch.batch_index, batch_size, cfg_.grid);
  auto tr = forward_pseudo(pseudo);
  tr.pillar_features = feats;
  return tr;
}

template <typename T>
void PointPillarsNet<T>::set_mode(NormMode mode) {
  encoder_.set_mode(mode);
  backbone_->set_mode(mode);
  neck_.set_mode(mode);
}

template <typename T>
ParameterSet<T> PointPillarsNet<T>::parameters() {
  ParameterSet<T> ps;
  encoder_.collect("encoder", ps);
  backbone_->collect("backbone", ps);
  neck_.collect("neck", ps);
  head_.collect("head", ps);
  return ps;
}

template class Fpn<float>;
template class Fpn<double>;
template class AnchorHead<float>;
template class AnchorHead<double>;
template class PointPillarsNet<float>;
template class PointPillarsNet<double>;
template LossOutput<float> detection_loss<float>(const HeadOutputs<float>&, const std::vector<TargetAssignment>&,
                                                 const LossWeights&);
template LossOutput<double> detection_loss<double>(const HeadOutputs<double>&, const std::vector<TargetAssignment>&,
                                                   const LossWeights&);
template std::vector<Detection> postprocess<float>(const HeadOutputs<float>&, std::int64_t, const std::vector<Anchor>&,
                                                   const PostprocessOptions&);
template std::vector<Detection> postprocess<double>(const HeadOutputs<double>&, std::int64_t,
                                                    const std::vector<Anchor>&, const PostprocessOptions&);

}  // namespace dpp
