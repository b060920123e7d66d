#include "densepillars/pillars.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <tuple>

namespace dpp {

namespace {

std::int64_t cells(double lo, double hi, double size, const char* axis) {
  const double n = (hi - lo) / size;
  const double rounded = std::round(n);
  if (!(hi > lo) || !(size > 0) || std::abs(n - rounded) > 1e-6) {
    throw ConfigError(std::string("grid: ") + axis + " extent is not a whole multiple of the pillar size");
  }
  return static_cast<std::int64_t>(rounded);
}

}  // namespace

std::int64_t GridSpec::width() const { return cells(x_min, x_max, pillar_x, "x"); }
std::int64_t GridSpec::height() const { return cells(y_min, y_max, pillar_y, "y"); }

void GridSpec::validate() const {
  width();
  height();
  if (!(z_max > z_min)) throw ConfigError("grid: z range is empty");
  if (max_points_per_pillar < 1) throw ConfigError("grid: max_points_per_pillar must be >= 1");
  if (max_pillars < 1) throw ConfigError("grid: max_pillars must be >= 1");
  if (feature_channels < 1) throw ConfigError("grid: feature_channels must be >= 1");
}

PillarBatch pillarize(const PointCloud& cloud, const GridSpec& grid, const PillarizeOptions& opts) {
  grid.validate();
  const std::int64_t width = grid.width(), height = grid.height();
  std::map<std::pair<std::int32_t, std::int32_t>, std::vector<LidarPoint>> occupied;
  for (const auto& p : cloud.points) {
    const double x = p.x, y = p.y, z = p.z;
    if (!(x >= grid.x_min && x < grid.x_max && y >= grid.y_min && y < grid.y_max && z >= grid.z_min &&
          z < grid.z_max)) {
      continue;
    }
    const auto col = static_cast<std::int64_t>(std::floor((x - grid.x_min) / grid.pillar_x));
    const auto row = static_cast<std::int64_t>(std::floor((y - grid.y_min) / grid.pillar_y));
    if (col < 0 || col >= width || row < 0 || row >= height) continue;
    occupied[{static_cast<std::int32_t>(row), static_cast<std::int32_t>(col)}].push_back(p);
  }

  std::mt19937_64 rng(opts.seed);
  std::vector<const std::pair<const std::pair<std::int32_t, std::int32_t>, std::vector<LidarPoint>>*> kept;
  kept.reserve(occupied.size());
  for (const auto& entry : occupied) kept.push_back(&entry);
  if (opts.cap_pillars && static_cast<std::int64_t>(kept.size()) > grid.max_pillars) {
    std::vector<std::size_t> idx(kept.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < static_cast<std::size_t>(grid.max_pillars); ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(static_cast<std::size_t>(grid.max_pillars));
    std::sort(idx.begin(), idx.end());
    std::vector<decltype(kept)::value_type> subset;
    for (auto i : idx) subset.push_back(kept[i]);
    kept.swap(subset);
  }

  const std::int64_t slots = grid.max_points_per_pillar;
  PillarBatch batch;
  batch.features = Tensor<float>({static_cast<std::int64_t>(kept.size()), slots, kPointFeatures});
  for (std::size_t i = 0; i < kept.size(); ++i) {
    auto points = kept[i]->second;
    auto key = [](const LidarPoint& a) { return std::tie(a.x, a.y, a.z, a.r); };
    std::sort(points.begin(), points.end(), [&](const auto& a, const auto& b) { return key(a) < key(b); });
    if (static_cast<std::int64_t>(points.size()) > slots) {
      // Partial Fisher-Yates, then restore canonical order among survivors.
      std::vector<std::size_t> idx(points.size());
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t k = 0; k < static_cast<std::size_t>(slots); ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
        std::swap(idx[k], idx[pick(rng)]);
      }
      idx.resize(static_cast<std::size_t>(slots));
      std::sort(idx.begin(), idx.end());
      std::vector<LidarPoint> subset;
      for (auto k : idx) subset.push_back(points[k]);
      points.swap(subset);
    }
    float* dst = batch.features.ptr() + static_cast<std::int64_t>(i) * slots * kPointFeatures;
    for (std::size_t k = 0; k < points.size(); ++k) {
      dst[k * kPointFeatures + 0] = points[k].x;
      dst[k * kPointFeatures + 1] = points[k].y;
      dst[k * kPointFeatures + 2] = points[k].z;
      dst[k * kPointFeatures + 3] = points[k].r;
    }
    batch.coords.push_back({kept[i]->first.first, kept[i]->first.second});
    batch.counts.push_back(static_cast<std::int32_t>(points.size()));
    batch.batch_index.push_back(0);
  }
  return batch;
}

void decorate(PillarBatch& batch, const GridSpec& grid) {
  const std::int64_t slots = batch.features.rank() == 3 ? batch.features.dim(1) : 0;
  for (std::int64_t i = 0; i < batch.num_pillars(); ++i) {
    float* base = batch.features.ptr() + i * slots * kPointFeatures;
    const std::int32_t count = batch.counts[static_cast<std::size_t>(i)];
    double mean[3] = {0, 0, 0};
    for (std::int32_t k = 0; k < count; ++k)
      for (int a = 0; a < 3; ++a) mean[a] += base[k * kPointFeatures + a];
    for (double& m : mean) m /= std::max(count, 1);
    const auto [row, col] = batch.coords[static_cast<std::size_t>(i)];
    const double cx = grid.x_min + (col + 0.5) * grid.pillar_x;
    const double cy = grid.y_min + (row + 0.5) * grid.pillar_y;
    for (std::int32_t k = 0; k < count; ++k) {
      float* f = base + k * kPointFeatures;
      for (int a = 0; a < 3; ++a) f[4 + a] = static_cast<float>(f[a] - mean[a]);
      f[7] = static_cast<float>(f[0] - cx);
      f[8] = static_cast<float>(f[1] - cy);
    }
  }
}

PillarBatch concat_batches(const std::vector<PillarBatch>& frames) {
  PillarBatch out;
  std::int64_t total = 0, slots = 0;
  for (const auto& f : frames) {
    total += f.num_pillars();
    if (f.features.rank() == 3) slots = std::max(slots, f.features.dim(1));
  }
  out.features = Tensor<float>({total, slots, kPointFeatures});
  float* dst = out.features.ptr();
  for (std::size_t b = 0; b < frames.size(); ++b) {
    const auto& f = frames[b];
    if (f.num_pillars() > 0 && f.features.dim(1) != slots) throw ConfigError("concat_batches: slot count mismatch");
    dst = std::copy(f.features.ptr(), f.features.ptr() + f.features.numel(), dst);
    out.coords.insert(out.coords.end(), f.coords.begin(), f.coords.end());
    out.counts.insert(out.counts.end(), f.counts.begin(), f.counts.end());
    out.batch_index.insert(out.batch_index.end(), static_cast<std::size_t>(f.num_pillars()),
                           static_cast<std::int32_t>(b));
  }
  return out;
}

template <typename T>
PillarFeatureNet<T>::PillarFeatureNet(int out_channels, std::uint64_t seed) : out_channels_(out_channels) {
  std::mt19937_64 rng(seed);
  weight_ = fan_out_normal<T>({kPointFeatures, out_channels}, out_channels, rng);
  bn_ = BatchNormParams<T>::create(out_channels);
}

template <typename T>
Var<T> PillarFeatureNet<T>::forward(const PillarBatch& batch) {
  const std::int64_t p = batch.num_pillars();
  if (p == 0) return Var<T>(Tensor<T>({0, out_channels_}));
  const std::int64_t slots = batch.features.dim(1);
  Var<T> x(batch.features.template cast<T>().reshaped({p * slots, kPointFeatures}));
  auto h = relu(batch_norm(linear_map(x, weight_), bn_));
  std::vector<bool> mask(static_cast<std::size_t>(p * slots));
  for (std::int64_t i = 0; i < p; ++i)
    for (std::int64_t k = 0; k < batch.counts[static_cast<std::size_t>(i)]; ++k)
      mask[static_cast<std::size_t>(i * slots + k)] = true;
  return max_over_axis(reshape(h, {p, slots, out_channels_}), 1, &mask);
}

template <typename T>
void PillarFeatureNet<T>::collect(const std::string& prefix, ParameterSet<T>& out) {
  out.add(prefix + ".linear.weight", weight_);
  out.add_norm(prefix + ".bn", bn_);
}

template <typename T>
Var<T> scatter_to_pseudo_image(const Var<T>& features, const std::vector<std::array<std::int32_t, 2>>& coords,
                               const std::vector<std::int32_t>& batch_index, std::int64_t batch_size,
                               const GridSpec& grid) {
  const Shape& fs = features.shape();
  if (fs.size() != 2 || fs[0] != static_cast<std::int64_t>(coords.size()) || coords.size() != batch_index.size()) {
    throw ConfigError("scatter: features " + shape_str(fs) + " do not match " + std::to_string(coords.size()) +
                      " coordinates");
  }
  const std::int64_t c = fs[1], h = grid.height(), w = grid.width();
  Tensor<T> image({batch_size, c, h, w});
  std::vector<std::int64_t> cell(coords.size());
  std::vector<bool> taken(static_cast<std::size_t>(batch_size * h * w), false);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    const auto [row, col] = coords[i];
    const std::int64_t b = batch_index[i];
    if (b < 0 || b >= batch_size || row < 0 || row >= h || col < 0 || col >= w) {
      throw InvariantError("scatter: pillar coordinate out of range");
    }
    const std::int64_t flat = (b * h + row) * w + col;
    if (taken[static_cast<std::size_t>(flat)]) throw InvariantError("scatter: duplicate pillar coordinate");
    taken[static_cast<std::size_t>(flat)] = true;
    cell[i] = flat;
    const T* src = features.value().ptr() + static_cast<std::int64_t>(i) * c;
    for (std::int64_t ch = 0; ch < c; ++ch) image.at(b, ch, row, col) = src[ch];
  }
  return Var<T>::from_op(std::move(image), {features}, [features, coords, batch_index, c, h, w](Node<T>& self) {
    T* d = features.node()->grad_buffer().ptr();
    for (std::size_t i = 0; i < coords.size(); ++i)
      for (std::int64_t ch = 0; ch < c; ++ch)
        d[static_cast<std::int64_t>(i) * c + ch] += self.grad.at(batch_index[i], ch, coords[i][0], coords[i][1]);
  });
}

template <typename T>
Tensor<T> gather_from_pseudo_image(const Tensor<T>& image, const std::vector<std::array<std::int32_t, 2>>& coords,
                                   const std::vector<std::int32_t>& batch_index) {
  const std::int64_t c = image.dim(1);
  Tensor<T> out({static_cast<std::int64_t>(coords.size()), c});
  for (std::size_t i = 0; i < coords.size(); ++i)
    for (std::int64_t ch = 0; ch < c; ++ch)
      out[static_cast<std::int64_t>(i) * c + ch] = image.at(batch_index[i], ch, coords[i][0], coords[i][1]);
  return out;
}

template class PillarFeatureNet<float>;
template class PillarFeatureNet<double>;
template Var<float> scatter_to_pseudo_image<float>(const Var<float>&, const std::vector<std::array<std::int32_t, 2>>&,
                                                   const std::vector<std::int32_t>&, std::int64_t, const GridSpec&);
template Var<double> scatter_to_pseudo_image<double>(const Var<double>&,
                                                     const std::vector<std::array<std::int32_t, 2>>&,
                                                     const std::vector<std::int32_t>&, std::int64_t, const GridSpec&);
template Tensor<float> gather_from_pseudo_image<float>(const Tensor<float>&,
                                                       const std::vector<std::array<std::int32_t, 2>>&,
                                                       const std::vector<std::int32_t>&);
template Tensor<double> gather_from_pseudo_image<double>(const Tensor<double>&,
                                                         const std::vector<std::array<std::int32_t, 2>>&,
                                                         const std::vector<std::int32_t>&);

}  // namespace dpp
