#include "densepillars/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "densepillars/errors.hpp"

namespace dpp {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const std::string& why) {
  throw ConfigError("config key '" + key + "': " + why + " (got '" + value + "')");
}

template <typename I>
I parse_int(const std::string& key, const std::string& s, I lo, I hi) {
  I v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) bad(key, s, "expected an integer");
  if (v < lo || v > hi) bad(key, s, "out of range [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return v;
}

double parse_double(const std::string& key, const std::string& s, double lo, double hi) {
  double v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) bad(key, s, "expected a number");
  if (v < lo || v > hi) bad(key, s, "out of range [" + fmt_double(lo) + ", " + fmt_double(hi) + "]");
  return v;
}

std::array<int, 3> parse_triple(const std::string& key, const std::string& s, int lo, int hi) {
  std::array<int, 3> out{};
  std::stringstream ss(s);
  std::string item;
  int n = 0;
  while (std::getline(ss, item, ',')) {
    if (n == 3) bad(key, s, "expected three comma-separated integers");
    out[static_cast<std::size_t>(n++)] = parse_int<int>(key, trim(item), lo, hi);
  }
  if (n != 3) bad(key, s, "expected three comma-separated integers");
  return out;
}

std::string triple_str(const std::array<int, 3>& a) {
  return std::to_string(a[0]) + "," + std::to_string(a[1]) + "," + std::to_string(a[2]);
}

struct Entry {
  std::string key;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

constexpr double kInf = std::numeric_limits<double>::infinity();

#define DPP_DOUBLE(KEY, FIELD, LO, HI, HELP)                                                               \
  Entry {                                                                                                  \
    KEY, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = parse_double(KEY, v, LO, HI); },         \
        [](const RunConfig& c) { return fmt_double(c.FIELD); }                                             \
  }
#define DPP_INT(KEY, FIELD, LO, HI, HELP)                                                                  \
  Entry {                                                                                                  \
    KEY, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = parse_int<int>(KEY, v, LO, HI); },       \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                                         \
  }
#define DPP_TRIPLE(KEY, FIELD, LO, HI, HELP)                                                               \
  Entry {                                                                                                  \
    KEY, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = parse_triple(KEY, v, LO, HI); },         \
        [](const RunConfig& c) { return triple_str(c.FIELD); }                                             \
  }

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = {
      {"seed", "run seed (weights, sampling, synthetic scenes)",
       [](RunConfig& c, const std::string& v) {
         c.seed = parse_int<std::uint64_t>("seed", v, 0, std::numeric_limits<std::uint64_t>::max());
         c.model.seed = c.seed;
       },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {"backbone.kind", "dense | baseline",
       [](RunConfig& c, const std::string& v) {
         if (v == "dense")
           c.model.backbone.kind = BackboneKind::kDense;
         else if (v == "baseline")
           c.model.backbone.kind = BackboneKind::kBaseline;
         else
           bad("backbone.kind", v, "expected dense or baseline");
       },
       [](const RunConfig& c) { return std::string(c.model.backbone.kind == BackboneKind::kDense ? "dense" : "baseline"); }},
      DPP_TRIPLE("backbone.layers", model.backbone.dense.layers_per_block, 1, 64, "dense layers per block"),
      DPP_TRIPLE("backbone.transition_channels", model.backbone.dense.transition_out_channels, 1, 4096,
                 "dense transition output channels (= tap channels)"),
      {"backbone.downsample", "avgpool | strided (dense transitions)",
       [](RunConfig& c, const std::string& v) {
         if (v == "avgpool")
           c.model.backbone.dense.downsample = Downsample::kAvgPool;
         else if (v == "strided")
           c.model.backbone.dense.downsample = Downsample::kStridedConv;
         else
           bad("backbone.downsample", v, "expected avgpool or strided");
       },
       [](const RunConfig& c) {
         return std::string(c.model.backbone.dense.downsample == Downsample::kAvgPool ? "avgpool" : "strided");
       }},
      DPP_TRIPLE("backbone.baseline_layers", model.backbone.baseline.layers_per_block, 0, 64,
                 "baseline same-resolution convs per stage"),
      DPP_TRIPLE("backbone.baseline_channels", model.backbone.baseline.channels, 1, 4096, "baseline stage channels"),
      {"growth.mode", "fixed | doubling | table",
       [](RunConfig& c, const std::string& v) {
         auto& g = c.model.backbone.dense.growth;
         if (v == "fixed")
           g.mode = GrowthMode::kFixed;
         else if (v == "doubling")
           g.mode = GrowthMode::kDoubling;
         else if (v == "table" || v == "table_matched")
           g.mode = GrowthMode::kTableMatched;
         else
           bad("growth.mode", v, "expected fixed, doubling or table");
       },
       [](const RunConfig& c) {
         switch (c.model.backbone.dense.growth.mode) {
           case GrowthMode::kFixed: return std::string("fixed");
           case GrowthMode::kDoubling: return std::string("doubling");
           case GrowthMode::kTableMatched: break;
         }
         return std::string("table");
       }},
      DPP_INT("growth.k", model.backbone.dense.growth.k, 1, 1024, "growth rate k (first-block rate k0 when doubling)"),
      DPP_DOUBLE("grid.x_min", model.grid.x_min, -1e4, 1e4, "detection range, metres"),
      DPP_DOUBLE("grid.x_max", model.grid.x_max, -1e4, 1e4, ""),
      DPP_DOUBLE("grid.y_min", model.grid.y_min, -1e4, 1e4, ""),
      DPP_DOUBLE("grid.y_max", model.grid.y_max, -1e4, 1e4, ""),
      DPP_DOUBLE("grid.z_min", model.grid.z_min, -1e4, 1e4, ""),
      DPP_DOUBLE("grid.z_max", model.grid.z_max, -1e4, 1e4, ""),
      {"grid.pillar_size", "pillar edge length, metres",
       [](RunConfig& c, const std::string& v) {
         c.model.grid.pillar_x = c.model.grid.pillar_y = parse_double("grid.pillar_size", v, 1e-3, 100.0);
       },
       [](const RunConfig& c) { return fmt_double(c.model.grid.pillar_x); }},
      DPP_INT("grid.max_points", model.grid.max_points_per_pillar, 1, 4096, "points kept per pillar"),
      DPP_INT("grid.max_pillars", model.grid.max_pillars, 1, 1 << 22, "pillars kept per frame when training"),
      DPP_INT("train.steps", train.steps, 1, 10000000, "optimizer steps"),
      DPP_DOUBLE("train.lr", train.lr, 0.0, 10.0, "initial learning rate"),
      DPP_DOUBLE("train.lr_min", train.lr_min, 0.0, 10.0, "final learning rate of the cosine schedule"),
      DPP_DOUBLE("train.weight_decay", train.weight_decay, 0.0, 10.0, "decoupled weight decay"),
      DPP_INT("train.batch_size", train.batch_size, 1, 1024, "frames per step"),
      DPP_INT("train.scenes", train.scenes, 1, 1000000, "synthetic scenes generated when no data is given"),
      DPP_DOUBLE("train.grad_clip", train.grad_clip, 0.0, kInf, "global gradient-norm clip, 0 = off"),
      DPP_INT("synth.boxes", synth.boxes, 0, 1000, "objects per synthetic scene"),
      DPP_DOUBLE("synth.noise", synth.noise, 0.0, 1.0, "point jitter bound, metres"),
      DPP_INT("synth.clutter", synth.clutter, 0, 10000000, "uniform clutter points per scene"),
      DPP_DOUBLE("synth.ground_density", synth.ground_density, 0.0, 1000.0, "ground points per square metre"),
      DPP_DOUBLE("eval.iou_car", eval.iou_thresholds[0], 0.0, 1.0, "AP matching threshold, Car"),
      DPP_DOUBLE("eval.iou_pedestrian", eval.iou_thresholds[1], 0.0, 1.0, "AP matching threshold, Pedestrian"),
      DPP_DOUBLE("eval.iou_cyclist", eval.iou_thresholds[2], 0.0, 1.0, "AP matching threshold, Cyclist"),
      {"eval.mode", "3d | bev",
       [](RunConfig& c, const std::string& v) {
         if (v == "3d")
           c.eval.mode = IouMode::k3D;
         else if (v == "bev")
           c.eval.mode = IouMode::kBev;
         else
           bad("eval.mode", v, "expected 3d or bev");
       },
       [](const RunConfig& c) { return std::string(c.eval.mode == IouMode::k3D ? "3d" : "bev"); }},
      DPP_INT("eval.recall_points", eval.recall_points, 1, 1000, "recall positions of the AP grid"),
      DPP_DOUBLE("infer.score_threshold", infer.score_threshold, 0.0, 1.0, "minimum sigmoid score"),
      DPP_DOUBLE("infer.nms_iou", infer.nms_iou, 0.0, 1.0, "class-wise rotated NMS threshold"),
      DPP_INT("infer.pre_nms_top", infer.pre_nms_top, 1, 1000000, "candidates kept before NMS"),
      DPP_INT("infer.max_detections", infer.max_detections, 1, 1000000, "detections kept per frame"),
  };
  return entries;
}

#undef DPP_DOUBLE
#undef DPP_INT
#undef DPP_TRIPLE

const Entry& find_entry(const std::string& key) {
  const std::string k = key == "growth.k0" ? "growth.k" : key;
  for (const auto& e : registry())
    if (e.key == k) return e;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

const char* source_name(ConfigSource s) {
  switch (s) {
    case ConfigSource::kDefault: return "default";
    case ConfigSource::kFile: return "file";
    case ConfigSource::kFlag: return "flag";
  }
  return "?";
}

ResolvedConfig::ResolvedConfig() {
  for (const auto& e : registry()) sources_[e.key] = ConfigSource::kDefault;
}

void ResolvedConfig::set(const std::string& key, const std::string& value, ConfigSource source) {
  const auto& e = find_entry(trim(key));
  e.set(cfg_, trim(value));
  sources_[e.key] = source;
}

void ResolvedConfig::load_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto cut = line.find_first_of("#;");
    if (cut != std::string::npos) line.resize(cut);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    try {
      set(key, line.substr(eq + 1), ConfigSource::kFile);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void ResolvedConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  load_text(ss.str(), path.string());
}

std::vector<ConfigKeyInfo> ResolvedConfig::describe() const {
  std::vector<ConfigKeyInfo> out;
  for (const auto& e : registry()) out.push_back({e.key, e.get(cfg_), e.help, sources_.at(e.key)});
  return out;
}

ConfigSource ResolvedConfig::source(const std::string& key) const { return sources_.at(find_entry(key).key); }

std::string ResolvedConfig::to_text() const {
  std::string out;
  for (const auto& e : registry()) out += e.key + " = " + e.get(cfg_) + "\n";
  return out;
}

void ResolvedConfig::validate() const {
  const auto& m = cfg_.model;
  m.grid.validate();
  m.backbone.dense.validate();
  m.backbone.baseline.validate();
  if (m.grid.height() % 8 != 0 || m.grid.width() % 8 != 0)
    throw ConfigError("grid: pillar counts must be divisible by 8 for the three stride-2 stages");
  if (m.backbone.out_channels() != m.neck.in_channels)
    throw ConfigError("backbone tap channels " + triple_str(m.backbone.out_channels()) + " differ from the neck inputs " +
                      triple_str(m.neck.in_channels));
  if (cfg_.train.lr_min > cfg_.train.lr) throw ConfigError("config key 'train.lr_min' exceeds train.lr");
}

ResolvedConfig parse_config(const std::filesystem::path& path,
                            const std::vector<std::pair<std::string, std::string>>& overrides) {
  ResolvedConfig rc;
  if (!path.empty()) rc.load_file(path);
  for (const auto& [k, v] : overrides) rc.set(k, v, ConfigSource::kFlag);
  rc.validate();
  return rc;
}

std::string desk_config_text() {
  return "[grid]\n"
         "x_min = 0\n"
         "x_max = 20.48\n"
         "y_min = -10.24\n"
         "y_max = 10.24\n"
         "max_pillars = 12000\n";
}

}  // namespace dpp
