#include "densepillars/pointcloud.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "densepillars/errors.hpp"

namespace dpp {

namespace {

float load_le_float(const unsigned char* p) {
  std::uint32_t u = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
                    (std::uint32_t(p[3]) << 24);
  return std::bit_cast<float>(u);
}

void store_le_float(float v, unsigned char* p) {
  const auto u = std::bit_cast<std::uint32_t>(v);
  p[0] = static_cast<unsigned char>(u & 0xff);
  p[1] = static_cast<unsigned char>((u >> 8) & 0xff);
  p[2] = static_cast<unsigned char>((u >> 16) & 0xff);
  p[3] = static_cast<unsigned char>((u >> 24) & 0xff);
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_real(std::string_view s, const std::filesystem::path& path, int line_no) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << std::setprecision(17);
  return os;
}

void write_box_fields(std::ostream& os, const LabeledBox& b) {
  os << class_name(b.cls) << ',' << b.box.cx << ',' << b.box.cy << ',' << b.box.cz << ',' << b.box.w << ','
     << b.box.l << ',' << b.box.h << ',' << wrap_angle(b.box.yaw);
}

constexpr std::string_view kLabelHeader = "class,cx,cy,cz,w,l,h,yaw";
constexpr std::string_view kPredHeader = "class,cx,cy,cz,w,l,h,yaw,score";

template <typename Row>
std::vector<Row> read_csv_rows(const std::filesystem::path& path, std::string_view header, std::size_t n_fields,
                               Row (*make)(const std::vector<std::string_view>&, const std::filesystem::path&, int)) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  std::vector<Row> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line != header) throw FormatError(path.string() + ":1: expected header '" + std::string(header) + "'");
      continue;
    }
    auto fields = split_commas(line);
    if (fields.size() != n_fields) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(n_fields) +
                        " fields, got " + std::to_string(fields.size()));
    }
    rows.push_back(make(fields, path, line_no));
  }
  return rows;
}

LabeledBox make_label(const std::vector<std::string_view>& f, const std::filesystem::path& path, int line_no) {
  LabeledBox b;
  try {
    b.cls = parse_class(f[0]);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
  }
  b.box.cx = parse_real(f[1], path, line_no);
  b.box.cy = parse_real(f[2], path, line_no);
  b.box.cz = parse_real(f[3], path, line_no);
  b.box.w = parse_real(f[4], path, line_no);
  b.box.l = parse_real(f[5], path, line_no);
  b.box.h = parse_real(f[6], path, line_no);
  b.box.yaw = wrap_angle(parse_real(f[7], path, line_no));
  if (b.box.w <= 0 || b.box.l <= 0 || b.box.h <= 0) {
    throw FormatError(path.string() + ":" + std::to_string(line_no) + ": box sizes must be positive");
  }
  return b;
}

Detection make_prediction(const std::vector<std::string_view>& f, const std::filesystem::path& path, int line_no) {
  LabeledBox b = make_label(f, path, line_no);
  return Detection{b.box, b.cls, parse_real(f[8], path, line_no)};
}

}  // namespace

PointCloud read_kitti_bin(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() % 16 != 0) {
    throw FormatError(path.string() + ": length " + std::to_string(bytes.size()) + " is not a multiple of 16");
  }
  PointCloud cloud;
  cloud.points.resize(bytes.size() / 16);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const unsigned char* p = bytes.data() + 16 * i;
    cloud.points[i] = {load_le_float(p), load_le_float(p + 4), load_le_float(p + 8), load_le_float(p + 12)};
  }
  return cloud;
}

void write_kitti_bin(const std::filesystem::path& path, const PointCloud& cloud) {
  std::vector<unsigned char> bytes(cloud.points.size() * 16);
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const auto& pt = cloud.points[i];
    unsigned char* p = bytes.data() + 16 * i;
    store_le_float(pt.x, p);
    store_le_float(pt.y, p + 4);
    store_le_float(pt.z, p + 8);
    store_le_float(pt.r, p + 12);
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_labels_csv(const std::filesystem::path& path, const std::vector<LabeledBox>& boxes) {
  auto os = open_out(path);
  os << kLabelHeader << '\n';
  for (const auto& b : boxes) {
    write_box_fields(os, b);
    os << '\n';
  }
}

std::vector<LabeledBox> read_labels_csv(const std::filesystem::path& path) {
  return read_csv_rows<LabeledBox>(path, kLabelHeader, 8, &make_label);
}

void write_predictions_csv(const std::filesystem::path& path, const std::vector<Detection>& dets) {
  auto os = open_out(path);
  os << kPredHeader << '\n';
  for (const auto& d : dets) {
    write_box_fields(os, LabeledBox{d.box, d.cls});
    os << ',' << d.score << '\n';
  }
}

std::vector<Detection> read_predictions_csv(const std::filesystem::path& path) {
  return read_csv_rows<Detection>(path, kPredHeader, 9, &make_prediction);
}

std::array<double, 3> typical_size(ObjectClass c) {
  switch (c) {
    case ObjectClass::kCar:
      return {1.6, 3.9, 1.56};
    case ObjectClass::kPedestrian:
      return {0.6, 0.8, 1.73};
    case ObjectClass::kCyclist:
      return {0.6, 1.76, 1.73};
  }
  return {1, 1, 1};
}

LabeledScene synth_scene(const SynthOptions& opts) {
  if (opts.n_boxes < 0) throw ConfigError("synth_scene: n_boxes must be >= 0");
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  std::discrete_distribution<int> pick_class(opts.class_mix.begin(), opts.class_mix.end());

  LabeledScene scene;
  std::vector<double> radii;
  for (int i = 0; i < opts.n_boxes; ++i) {
    const auto cls = static_cast<ObjectClass>(pick_class(rng));
    const auto base = typical_size(cls);
    Box3D b;
    b.w = base[0] * uniform(0.95, 1.05);
    b.l = base[1] * uniform(0.95, 1.05);
    b.h = base[2] * uniform(0.95, 1.05);
    b.yaw = wrap_angle(uniform(-std::numbers::pi, std::numbers::pi));
    b.cz = opts.ground_z + 0.5 * b.h;
    // The footprint stays inside the range for any yaw when the centre keeps
    // half a diagonal away from every edge.
    const double radius = 0.5 * std::hypot(b.w, b.l);
    const double x_lo = opts.x_range[0] + radius, x_hi = opts.x_range[1] - radius;
    const double y_lo = opts.y_range[0] + radius, y_hi = opts.y_range[1] - radius;
    if (x_lo >= x_hi || y_lo >= y_hi) throw ConfigError("synth_scene: range too small for a box");
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      b.cx = uniform(x_lo, x_hi);
      b.cy = uniform(y_lo, y_hi);
      placed = true;
      for (std::size_t j = 0; j < scene.boxes.size(); ++j) {
        const auto& o = scene.boxes[j].box;
        if (std::hypot(b.cx - o.cx, b.cy - o.cy) < radius + radii[j] + 0.5) {
          placed = false;
          break;
        }
      }
    }
    if (!placed) throw ConfigError("synth_scene: could not place " + std::to_string(opts.n_boxes) + " boxes");
    scene.boxes.push_back({b, cls});
    radii.push_back(radius);
  }

  auto jitter = [&] { return uniform(-opts.noise, opts.noise); };
  auto& pts = scene.cloud.points;
  for (const auto& lb : scene.boxes) {
    const Box3D& b = lb.box;
    const int n_pts = lb.cls == ObjectClass::kCar ? 120 : 60;
    const double side_l = b.l * b.h, side_w = b.w * b.h, top = b.w * b.l;
    const double total = 2 * side_l + 2 * side_w + top;
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    for (int k = 0; k < n_pts; ++k) {
      double u = unit(rng) * total;
      double lx, ly, lz;
      if (u < 2 * side_l) {
        lx = uniform(-0.5, 0.5) * b.l;
        ly = (u < side_l ? 0.5 : -0.5) * b.w;
        lz = uniform(-0.5, 0.5) * b.h;
      } else if ((u -= 2 * side_l) < 2 * side_w) {
        lx = (u < side_w ? 0.5 : -0.5) * b.l;
        ly = uniform(-0.5, 0.5) * b.w;
        lz = uniform(-0.5, 0.5) * b.h;
      } else {
        lx = uniform(-0.5, 0.5) * b.l;
        ly = uniform(-0.5, 0.5) * b.w;
        lz = 0.5 * b.h;
      }
      const double x = b.cx + c * lx - s * ly + jitter();
      const double y = b.cy + s * lx + c * ly + jitter();
      const double z = b.cz + lz + jitter();
      pts.push_back({static_cast<float>(x), static_cast<float>(y), static_cast<float>(z),
                     static_cast<float>(uniform(0.2, 0.9))});
    }
  }

  const double area = (opts.x_range[1] - opts.x_range[0]) * (opts.y_range[1] - opts.y_range[0]);
  const auto n_ground = static_cast<int>(area * opts.ground_density);
  for (int k = 0; k < n_ground; ++k) {
    pts.push_back({static_cast<float>(uniform(opts.x_range[0], opts.x_range[1])),
                   static_cast<float>(uniform(opts.y_range[0], opts.y_range[1])),
                   static_cast<float>(opts.ground_z + jitter()), static_cast<float>(uniform(0.0, 0.3))});
  }
  int clutter = 0;
  for (int attempt = 0; clutter < opts.clutter_points && attempt < 20 * opts.clutter_points + 20; ++attempt) {
    const double x = uniform(opts.x_range[0], opts.x_range[1]);
    const double y = uniform(opts.y_range[0], opts.y_range[1]);
    const double z = uniform(opts.ground_z, opts.ground_z + 2.5);
    bool inside = false;
    for (const auto& lb : scene.boxes) inside = inside || point_in_box(lb.box, x, y, z, 0.3, 0.3);
    if (inside) continue;
    pts.push_back({static_cast<float>(x), static_cast<float>(y), static_cast<float>(z),
                   static_cast<float>(unit(rng))});
    ++clutter;
  }
  return scene;
}

}  // namespace dpp
