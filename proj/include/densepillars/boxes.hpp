#pragma once

#include <array>
#include <string>
#include <string_view>

namespace dpp {

/// Oriented 3-D box in the lidar frame. `w` spans the box's local y axis,
/// `l` its local x axis; yaw rotates about +z, counter-clockwise from +x.
struct Box3D {
  double cx = 0, cy = 0, cz = 0;
  double w = 1, l = 1, h = 1;
  double yaw = 0;
};

enum class ObjectClass : int { kCar = 0, kPedestrian = 1, kCyclist = 2 };
inline constexpr int kNumClasses = 3;
inline constexpr std::array<ObjectClass, kNumClasses> kAllClasses{ObjectClass::kCar, ObjectClass::kPedestrian,
                                                                  ObjectClass::kCyclist};

std::string_view class_name(ObjectClass c);
/// Throws FormatError on anything but Car / Pedestrian / Cyclist.
ObjectClass parse_class(std::string_view name);

struct LabeledBox {
  Box3D box;
  ObjectClass cls = ObjectClass::kCar;
};

struct Detection {
  Box3D box;
  ObjectClass cls = ObjectClass::kCar;
  double score = 0.0;
};

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

/// BEV corners in counter-clockwise order.
std::array<std::array<double, 2>, 4> bev_corners(const Box3D& b);

/// Containment in the box grown by `margin_xy` on each side face and
/// `margin_z` on top and bottom.
bool point_in_box(const Box3D& b, double x, double y, double z, double margin_xy = 0.0, double margin_z = 0.0);

}  // namespace dpp
