#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "densepillars/checkpoint.hpp"
#include "densepillars/commands.hpp"
#include "densepillars/errors.hpp"

namespace py = pybind11;
using namespace dpp;

namespace {

using BoxArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using PointArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Box3D box_from(const std::array<double, 7>& v) { return {v[0], v[1], v[2], v[3], v[4], v[5], v[6]}; }
std::array<double, 7> box_to(const Box3D& b) { return {b.cx, b.cy, b.cz, b.w, b.l, b.h, b.yaw}; }

std::vector<Box3D> boxes_from(const BoxArray& a) {
  if (a.ndim() != 2 || a.shape(1) != 7) throw py::value_error("boxes must have shape (N, 7): cx, cy, cz, w, l, h, yaw");
  std::vector<Box3D> out;
  auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < r.shape(0); ++i)
    out.push_back({r(i, 0), r(i, 1), r(i, 2), r(i, 3), r(i, 4), r(i, 5), r(i, 6)});
  return out;
}

BoxArray boxes_to(const std::vector<Box3D>& boxes) {
  BoxArray a({static_cast<py::ssize_t>(boxes.size()), py::ssize_t{7}});
  auto w = a.mutable_unchecked<2>();
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const auto v = box_to(boxes[i]);
    for (int j = 0; j < 7; ++j) w(static_cast<py::ssize_t>(i), j) = v[static_cast<std::size_t>(j)];
  }
  return a;
}

PointCloud cloud_from(const PointArray& a) {
  if (a.ndim() != 2 || a.shape(1) != 4) throw py::value_error("points must have shape (N, 4): x, y, z, reflectance");
  PointCloud c;
  auto r = a.unchecked<2>();
  c.points.reserve(static_cast<std::size_t>(r.shape(0)));
  for (py::ssize_t i = 0; i < r.shape(0); ++i) c.points.push_back({r(i, 0), r(i, 1), r(i, 2), r(i, 3)});
  return c;
}

PointArray cloud_to(const PointCloud& c) {
  PointArray a({static_cast<py::ssize_t>(c.points.size()), py::ssize_t{4}});
  auto w = a.mutable_unchecked<2>();
  for (std::size_t i = 0; i < c.points.size(); ++i) {
    const auto& p = c.points[i];
    const auto k = static_cast<py::ssize_t>(i);
    w(k, 0) = p.x, w(k, 1) = p.y, w(k, 2) = p.z, w(k, 3) = p.r;
  }
  return a;
}

py::dict labels_to(const std::vector<LabeledBox>& labels) {
  std::vector<Box3D> boxes;
  std::vector<std::string> names;
  for (const auto& l : labels) {
    boxes.push_back(l.box);
    names.emplace_back(class_name(l.cls));
  }
  py::dict d;
  d["boxes"] = boxes_to(boxes);
  d["classes"] = names;
  return d;
}

py::dict detections_to(const std::vector<Detection>& dets) {
  std::vector<Box3D> boxes;
  std::vector<std::string> names;
  std::vector<double> scores;
  for (const auto& d : dets) {
    boxes.push_back(d.box);
    names.emplace_back(class_name(d.cls));
    scores.push_back(d.score);
  }
  py::dict d;
  d["boxes"] = boxes_to(boxes);
  d["classes"] = names;
  d["scores"] = py::array_t<double>(static_cast<py::ssize_t>(scores.size()), scores.data());
  return d;
}

ResolvedConfig make_config(const std::optional<std::filesystem::path>& path, const std::map<std::string, std::string>& overrides) {
  std::vector<std::pair<std::string, std::string>> o(overrides.begin(), overrides.end());
  return parse_config(path.value_or(std::filesystem::path{}), o);
}

py::dict report_to(const ComponentReport& r) {
  py::dict out;
  for (const auto* rep : {&r.dense, &r.baseline}) {
    py::dict comp;
    for (const auto& row : rep->rows) {
      py::dict c;
      c["params"] = row.cost.params;
      c["macs"] = row.cost.macs;
      comp[py::str(row.component)] = c;
    }
    out[py::str(rep->backbone)] = comp;
  }
  out["param_ratio"] = r.param_ratio;
  out["mac_ratio"] = r.mac_ratio;
  return out;
}

// Trained network loaded from a checkpoint, for frame-by-frame inference.
class Detector {
 public:
  Detector(const std::filesystem::path& ckpt, const std::map<std::string, std::string>& overrides)
      : rc_(config_from_checkpoint(ckpt, {overrides.begin(), overrides.end()})), net_(rc_.config().model) {
    auto params = net_.parameters();
    load_checkpoint(ckpt, params);
    net_.set_mode(NormMode::kEval);
  }
  py::dict detect(const PointArray& points) {
    auto cloud = cloud_from(points);
    std::vector<Detection> dets;
    {
      py::gil_scoped_release nogil;
      dets = detect_frame(cloud);
    }
    return detections_to(dets);
  }
  std::string config_text() const { return rc_.to_text(); }

 private:
  std::vector<Detection> detect_frame(const PointCloud& cloud) { return dpp::detect(net_, cloud, rc_.config().infer); }
  ResolvedConfig rc_;
  PointPillarsNet<float> net_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Pillar-based 3-D detection kit with a dense one-shot-aggregation backbone";

  auto base = py::register_exception<Error>(m, "DensePillarsError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<IoError>(m, "IoError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<InvariantError>(m, "InvariantError", base.ptr());

  m.def(
      "analyze",
      [](const std::optional<std::filesystem::path>& config, const std::map<std::string, std::string>& overrides) {
        auto rc = make_config(config, overrides);
        return report_to(component_report(rc.config().model));
      },
      py::arg("config") = py::none(), py::arg("overrides") = std::map<std::string, std::string>{},
      "Parameter and MAC counts per component for the dense and baseline backbones.");

  m.def(
      "analyze_csv",
      [](const std::optional<std::filesystem::path>& config, const std::map<std::string, std::string>& overrides) {
        return component_report(make_config(config, overrides).config().model).csv();
      },
      py::arg("config") = py::none(), py::arg("overrides") = std::map<std::string, std::string>{});

  m.def(
      "count_backbone_params",
      [](const std::string& growth, std::array<int, 3> layers, std::array<int, 3> transitions, int in_channels) {
        DenseBackboneSpec d;
        d.growth = parse_growth(growth);
        d.layers_per_block = layers;
        d.transition_out_channels = transitions;
        d.input_channels = in_channels;
        return count_params(d);
      },
      py::arg("growth") = "table", py::arg("layers") = std::array<int, 3>{3, 5, 5},
      py::arg("transitions") = std::array<int, 3>{64, 128, 256}, py::arg("in_channels") = 64);

  m.def(
      "growth_rates", [](const std::string& growth) { return parse_growth(growth).rates(); }, py::arg("growth"));

  m.def(
      "describe_config",
      [](const std::optional<std::filesystem::path>& config, const std::map<std::string, std::string>& overrides) {
        auto rc = make_config(config, overrides);
        py::list out;
        for (const auto& k : rc.describe())
          out.append(py::make_tuple(k.key, k.value, std::string(source_name(k.source))));
        return out;
      },
      py::arg("config") = py::none(), py::arg("overrides") = std::map<std::string, std::string>{},
      "(key, value, source) for every config key.");

  m.def(
      "rotated_iou_bev", [](const std::array<double, 7>& a, const std::array<double, 7>& b) {
        return rotated_iou_bev(box_from(a), box_from(b));
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "iou_3d", [](const std::array<double, 7>& a, const std::array<double, 7>& b) {
        return iou_3d(box_from(a), box_from(b));
      },
      py::arg("a"), py::arg("b"));

  m.def(
      "nms_bev",
      [](const BoxArray& boxes, const std::vector<double>& scores, const std::vector<std::string>& classes,
         double iou_threshold) {
        auto b = boxes_from(boxes);
        if (scores.size() != b.size() || classes.size() != b.size())
          throw py::value_error("boxes, scores and classes must have the same length");
        std::vector<Detection> d;
        for (std::size_t i = 0; i < b.size(); ++i) d.push_back({b[i], parse_class(classes[i]), scores[i]});
        return nms_bev(d, iou_threshold);
      },
      py::arg("boxes"), py::arg("scores"), py::arg("classes"), py::arg("iou_threshold"),
      "Indices kept by class-wise greedy NMS, in descending score order.");

  m.def("read_kitti_bin", [](const std::filesystem::path& p) { return cloud_to(read_kitti_bin(p)); }, py::arg("path"));
  m.def(
      "write_kitti_bin", [](const std::filesystem::path& p, const PointArray& pts) { write_kitti_bin(p, cloud_from(pts)); },
      py::arg("path"), py::arg("points"));
  m.def("read_labels_csv", [](const std::filesystem::path& p) { return labels_to(read_labels_csv(p)); }, py::arg("path"));

  m.def(
      "synth_scene",
      [](std::uint64_t seed, int boxes, std::array<double, 2> x_range, std::array<double, 2> y_range) {
        SynthOptions o;
        o.seed = seed;
        o.n_boxes = boxes;
        o.x_range = x_range;
        o.y_range = y_range;
        auto s = synth_scene(o);
        return py::make_tuple(cloud_to(s.cloud), labels_to(s.boxes));
      },
      py::arg("seed") = 0, py::arg("boxes") = 5, py::arg("x_range") = std::array<double, 2>{0.0, 69.12},
      py::arg("y_range") = std::array<double, 2>{-39.68, 39.68}, "(points (N, 4), {'boxes', 'classes'})");

  m.def(
      "gradcheck",
      [](int points, std::uint64_t seed) {
        std::vector<GradSuiteRow> rows;
        {
          py::gil_scoped_release nogil;
          rows = run_gradient_suite(points, seed);
        }
        py::list out;
        for (const auto& r : rows) {
          py::dict d;
          d["name"] = r.name;
          d["max_rel_error"] = r.max_rel_error;
          d["tolerance"] = r.tolerance;
          d["passed"] = r.passed();
          out.append(d);
        }
        return out;
      },
      py::arg("points") = 10, py::arg("seed") = 0);

  m.def(
      "train",
      [](const std::filesystem::path& out_dir, const std::optional<std::filesystem::path>& config,
         const std::map<std::string, std::string>& overrides, const std::optional<std::filesystem::path>& data_dir,
         const std::optional<std::filesystem::path>& resume) {
        auto rc = make_config(config, overrides);
        std::ostringstream log;
        TrainArtifacts art;
        {
          py::gil_scoped_release nogil;
          art = cmd_train(rc, data_dir.value_or(std::filesystem::path{}), out_dir, resume, log);
        }
        py::list hist;
        for (const auto& r : art.history) hist.append(py::make_tuple(r.step, r.lr, r.cls, r.loc, r.dir, r.total));
        py::dict d;
        d["checkpoint"] = art.checkpoint;
        d["loss_csv"] = art.loss_csv;
        d["history"] = hist;
        return d;
      },
      py::arg("out_dir"), py::arg("config") = py::none(),
      py::arg("overrides") = std::map<std::string, std::string>{}, py::arg("data_dir") = py::none(),
      py::arg("resume") = py::none(),
      "Trains and writes loss.csv and model.ckpt; history rows are (step, lr, cls, loc, dir, total).");

  m.def(
      "evaluate",
      [](const std::filesystem::path& pred_dir, const std::filesystem::path& label_dir,
         const std::optional<std::filesystem::path>& config, const std::map<std::string, std::string>& overrides) {
        auto rc = make_config(config, overrides);
        std::ostringstream log;
        auto res = cmd_eval(rc.config(), pred_dir, label_dir, log);
        py::dict ap;
        for (auto c : kAllClasses) {
          const auto& v = res.ap[static_cast<std::size_t>(c)];
          ap[py::str(std::string(class_name(c)))] = v ? py::object(py::float_(*v)) : py::object(py::none());
        }
        py::dict d;
        d["ap"] = ap;
        d["mean_ap"] = res.mean_ap;
        d["warnings"] = res.warnings;
        return d;
      },
      py::arg("pred_dir"), py::arg("label_dir"), py::arg("config") = py::none(),
      py::arg("overrides") = std::map<std::string, std::string>{});

  py::class_<Detector>(m, "Detector")
      .def(py::init<const std::filesystem::path&, const std::map<std::string, std::string>&>(), py::arg("checkpoint"),
           py::arg("overrides") = std::map<std::string, std::string>{})
      .def("detect", &Detector::detect, py::arg("points"),
           "Detections for one (N, 4) point array: {'boxes', 'classes', 'scores'}.")
      .def_property_readonly("config_text", &Detector::config_text);
}
