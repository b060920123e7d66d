#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "densepillars/errors.hpp"
#include "densepillars/pointcloud.hpp"

using namespace dpp;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "dpp_test_pointcloud";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("KITTI bin round trip is exact") {
  PointCloud c;
  c.points = {{1.5f, -2.25f, 0.125f, 0.5f}, {69.0f, 39.0f, -3.0f, 0.0f}, {1e-7f, -0.0f, 3.4e38f, 1.0f}};
  auto p = scratch("a.bin");
  write_kitti_bin(p, c);
  CHECK(fs::file_size(p) == 48);
  auto back = read_kitti_bin(p);
  REQUIRE(back.points.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.points[i].x == c.points[i].x);
    CHECK(back.points[i].y == c.points[i].y);
    CHECK(back.points[i].z == c.points[i].z);
    CHECK(back.points[i].r == c.points[i].r);
  }
}

TEST_CASE("KITTI bin errors") {
  auto p = scratch("bad.bin");
  {
    std::ofstream o(p, std::ios::binary);
    o << "0123456789";
  }
  CHECK_THROWS_AS(read_kitti_bin(p), FormatError);
  CHECK_THROWS_AS(read_kitti_bin(scratch("does_not_exist.bin")), IoError);
  auto empty = scratch("empty.bin");
  write_kitti_bin(empty, {});
  CHECK(read_kitti_bin(empty).points.empty());
}

TEST_CASE("label CSV round trip") {
  std::vector<LabeledBox> boxes{{{1.25, -3.5, -1.0, 1.6, 3.9, 1.56, 0.7}, ObjectClass::kCar},
                                {{10.0, 2.0, -0.6, 0.6, 0.8, 1.73, -2.5}, ObjectClass::kPedestrian},
                                {{20.0, 0.1, -0.6, 0.6, 1.76, 1.73, 3.0}, ObjectClass::kCyclist}};
  auto p = scratch("labels.csv");
  write_labels_csv(p, boxes);
  auto back = read_labels_csv(p);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].cls == boxes[i].cls);
    CHECK(back[i].box.cx == boxes[i].box.cx);
    CHECK(back[i].box.l == boxes[i].box.l);
    CHECK(back[i].box.yaw == boxes[i].box.yaw);
  }
}

TEST_CASE("label CSV rejects bad rows") {
  auto p = scratch("bad_labels.csv");
  {
    std::ofstream o(p);
    o << "class,cx,cy,cz,w,l,h,yaw\nTruck,1,2,3,1,1,1,0\n";
  }
  CHECK_THROWS_AS(read_labels_csv(p), FormatError);
  {
    std::ofstream o(p);
    o << "class,cx,cy,cz,w,l,h,yaw\nCar,1,2,x,1,1,1,0\n";
  }
  CHECK_THROWS_AS(read_labels_csv(p), FormatError);
}

TEST_CASE("prediction CSV keeps scores") {
  std::vector<Detection> d{{{1, 2, 3, 1, 2, 1, 0.5}, ObjectClass::kCyclist, 0.875}};
  auto p = scratch("pred.csv");
  write_predictions_csv(p, d);
  auto back = read_predictions_csv(p);
  REQUIRE(back.size() == 1);
  CHECK(back[0].score == 0.875);
  CHECK(back[0].cls == ObjectClass::kCyclist);
}

TEST_CASE("synthetic scenes are seeded and put points on every object") {
  SynthOptions o;
  o.seed = 3;
  o.n_boxes = 6;
  auto a = synth_scene(o), b = synth_scene(o);
  REQUIRE(a.boxes.size() == 6);
  REQUIRE(a.cloud.points.size() == b.cloud.points.size());
  for (std::size_t i = 0; i < a.cloud.points.size(); ++i) CHECK(a.cloud.points[i].x == b.cloud.points[i].x);
  for (const auto& lb : a.boxes) {
    int inside = 0;
    for (const auto& p : a.cloud.points) inside += point_in_box(lb.box, p.x, p.y, p.z, 0.05, 0.05);
    CHECK(inside >= 50);
    CHECK(lb.box.cx >= o.x_range[0]);
    CHECK(lb.box.cx < o.x_range[1]);
  }
  o.seed = 4;
  CHECK(synth_scene(o).boxes[0].box.cx != a.boxes[0].box.cx);
}

TEST_CASE("boxes of a synthetic scene do not overlap") {
  SynthOptions o;
  o.seed = 9;
  o.n_boxes = 10;
  auto s = synth_scene(o);
  for (std::size_t i = 0; i < s.boxes.size(); ++i)
    for (std::size_t j = i + 1; j < s.boxes.size(); ++j)
      CHECK(std::hypot(s.boxes[i].box.cx - s.boxes[j].box.cx, s.boxes[i].box.cy - s.boxes[j].box.cy) > 0.5);
}

TEST_CASE("wrap_angle maps into (-pi, pi]") {
  CHECK(wrap_angle(3 * M_PI) == doctest::Approx(M_PI));
  CHECK(wrap_angle(-M_PI) == doctest::Approx(M_PI));
  CHECK(wrap_angle(0.5) == doctest::Approx(0.5));
}
