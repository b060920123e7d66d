#include "densepillars/boxes.hpp"

#include <cmath>
#include <numbers>

#include "densepillars/errors.hpp"

namespace dpp {

std::string_view class_name(ObjectClass c) {
  switch (c) {
    case ObjectClass::kCar:
      return "Car";
    case ObjectClass::kPedestrian:
      return "Pedestrian";
    case ObjectClass::kCyclist:
      return "Cyclist";
  }
  return "?";
}

ObjectClass parse_class(std::string_view name) {
  for (auto c : kAllClasses)
    if (class_name(c) == name) return c;
  throw FormatError("unknown class '" + std::string(name) + "'");
}

double wrap_angle(double a) {
  if (a > -std::numbers::pi && a <= std::numbers::pi) return a;
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(a + std::numbers::pi, two_pi);
  if (r < 0) r += two_pi;
  r -= std::numbers::pi;
  // fmod maps the upper end to -pi; the interval is half-open at -pi.
  if (r <= -std::numbers::pi) r += two_pi;
  return r;
}

std::array<std::array<double, 2>, 4> bev_corners(const Box3D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hl = 0.5 * b.l, hw = 0.5 * b.w;
  const std::array<std::array<double, 2>, 4> local{{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<std::array<double, 2>, 4> out{};
  for (int i = 0; i < 4; ++i) {
    out[i] = {b.cx + c * local[i][0] - s * local[i][1], b.cy + s * local[i][0] + c * local[i][1]};
  }
  return out;
}

bool point_in_box(const Box3D& b, double x, double y, double z, double margin_xy, double margin_z) {
  const double dx = x - b.cx, dy = y - b.cy;
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double lx = c * dx + s * dy;
  const double ly = -s * dx + c * dy;
  return std::abs(lx) <= 0.5 * b.l + margin_xy && std::abs(ly) <= 0.5 * b.w + margin_xy &&
         std::abs(z - b.cz) <= 0.5 * b.h + margin_z;
}

}  // namespace dpp
