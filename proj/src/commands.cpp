#include "densepillars/commands.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <thread>

#include "densepillars/checkpoint.hpp"
#include "densepillars/errors.hpp"

namespace dpp {

namespace fs = std::filesystem;

namespace {

std::string scene_stem(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%06d", i);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::vector<fs::path> list_with_ext(const fs::path& dir, const std::string& ext) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

int thread_count_from_env() {
  const char* v = std::getenv(kThreadsEnv);
  if (v == nullptr || *v == '\0') return 1;
  int n = 0;
  const char* end = v + std::char_traits<char>::length(v);
  auto [p, ec] = std::from_chars(v, end, n);
  if (ec != std::errc() || p != end || n < 1 || n > 1024)
    throw ConfigError(std::string(kThreadsEnv) + " must be an integer in [1, 1024], got '" + v + "'");
  return n;
}

ComponentReport cmd_analyze(const RunConfig& cfg, const std::optional<fs::path>& csv_path, std::ostream& out) {
  auto rep = component_report(cfg.model);
  out << rep.render_table();
  if (csv_path) {
    if (csv_path->has_parent_path()) ensure_dir(csv_path->parent_path());
    std::ofstream f(*csv_path);
    if (!f) throw IoError("cannot write " + csv_path->string());
    f << rep.csv();
  }
  return rep;
}

bool cmd_gradcheck(int points, std::uint64_t seed, std::ostream& out) {
  auto rows = run_gradient_suite(points, seed);
  bool ok = true;
  out << std::left << std::setw(36) << "op" << std::setw(17) << "max rel err" << std::setw(10) << "tol"
      << "result\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(36) << r.name << std::setw(17) << fmt_g(r.max_rel_error) << std::setw(10)
        << fmt_g(r.tolerance) << (r.passed() ? "PASS" : "FAIL") << "\n";
    ok = ok && r.passed();
  }
  return ok;
}

void cmd_synth(const RunConfig& cfg, const fs::path& out_dir, int count, std::ostream& out) {
  if (count < 1) throw ConfigError("synth: count must be >= 1");
  ensure_dir(out_dir);
  auto scenes = make_synthetic_set(cfg, count);
  for (int i = 0; i < count; ++i) {
    const auto stem = scene_stem(i);
    write_kitti_bin(out_dir / (stem + ".bin"), scenes[static_cast<std::size_t>(i)].cloud);
    write_labels_csv(out_dir / (stem + ".csv"), scenes[static_cast<std::size_t>(i)].boxes);
  }
  out << "wrote " << count << " scenes to " << out_dir.string() << "\n";
}

std::vector<std::pair<std::string, LabeledScene>> load_scene_dir(const fs::path& dir) {
  std::vector<std::pair<std::string, LabeledScene>> out;
  for (const auto& bin : list_with_ext(dir, ".bin")) {
    auto labels = bin;
    labels.replace_extension(".csv");
    if (!fs::exists(labels)) throw IoError("missing labels " + labels.string() + " for " + bin.string());
    out.push_back({bin.stem().string(), {read_kitti_bin(bin), read_labels_csv(labels)}});
  }
  if (out.empty()) throw IoError("no .bin frames in " + dir.string());
  return out;
}

TrainArtifacts cmd_train(const ResolvedConfig& rc, const fs::path& data_dir, const fs::path& out_dir,
                         const std::optional<fs::path>& resume, std::ostream& out) {
  const RunConfig& cfg = rc.config();
  std::vector<LabeledScene> scenes;
  if (data_dir.empty()) {
    scenes = make_synthetic_set(cfg, cfg.train.scenes);
  } else {
    for (auto& [stem, s] : load_scene_dir(data_dir)) scenes.push_back(std::move(s));
  }
  PointPillarsNet<float> net(cfg.model);
  OptimizerState<float> opt;
  opt.options.lr = cfg.train.lr;
  opt.options.weight_decay = cfg.train.weight_decay;
  if (resume) {
    auto params = net.parameters();
    auto loaded = load_checkpoint(*resume, params);
    opt = std::move(loaded.optimizer);
    out << "resumed from " << resume->string() << " at step " << opt.step << "\n";
  }
  ensure_dir(out_dir);
  TrainArtifacts art;
  art.loss_csv = out_dir / "loss.csv";
  art.checkpoint = out_dir / "model.ckpt";
  std::ofstream csv(art.loss_csv, resume ? std::ios::app : std::ios::trunc);
  if (!csv) throw IoError("cannot write " + art.loss_csv.string());
  if (!resume) csv << "step,lr,cls,loc,dir,total\n";
  out << "training " << (cfg.model.backbone.kind == BackboneKind::kDense ? "dense" : "baseline") << " on "
      << scenes.size() << " scenes for " << cfg.train.steps << " steps\n";
  const std::int64_t log_every = std::max<std::int64_t>(1, cfg.train.steps / 20);
  art.history = train_model(net, opt, scenes, cfg, [&](const LossRow& r) {
    csv << r.step << "," << fmt_g(r.lr) << "," << fmt_g(r.cls) << "," << fmt_g(r.loc) << "," << fmt_g(r.dir) << ","
        << fmt_g(r.total) << "\n";
    if (r.step % log_every == 0 || r.step + 1 == cfg.train.steps)
      out << "step " << r.step << " lr " << fmt_g(r.lr) << " loss " << fmt_g(r.total) << std::endl;
  });
  csv.flush();
  if (!csv) throw IoError("failed writing " + art.loss_csv.string());
  auto params = net.parameters();
  save_checkpoint(art.checkpoint, params, opt, rc.to_text());
  out << "checkpoint " << art.checkpoint.string() << "\n";
  return art;
}

ResolvedConfig config_from_checkpoint(const fs::path& ckpt,
                                      const std::vector<std::pair<std::string, std::string>>& overrides) {
  ResolvedConfig rc;
  rc.load_text(read_checkpoint_config(ckpt), ckpt.string());
  for (const auto& [k, v] : overrides) {
    if (k.rfind("infer.", 0) != 0 && k.rfind("eval.", 0) != 0)
      throw ConfigError("config key '" + k + "' cannot be changed for a trained checkpoint");
    rc.set(k, v, ConfigSource::kFlag);
  }
  rc.validate();
  return rc;
}

std::vector<fs::path> cmd_infer(const fs::path& ckpt, const fs::path& input, const fs::path& out_dir,
                                const std::vector<std::pair<std::string, std::string>>& overrides, int threads,
                                std::ostream& out) {
  auto rc = config_from_checkpoint(ckpt, overrides);
  const RunConfig& cfg = rc.config();
  PointPillarsNet<float> net(cfg.model);
  {
    auto params = net.parameters();
    load_checkpoint(ckpt, params);
  }
  net.set_mode(NormMode::kEval);

  std::vector<fs::path> frames;
  if (fs::is_regular_file(input))
    frames.push_back(input);
  else
    frames = list_with_ext(input, ".bin");
  if (frames.empty()) throw IoError("no .bin frames in " + input.string());
  ensure_dir(out_dir);

  std::vector<fs::path> written(frames.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= frames.size()) return;
      try {
        auto dets = detect(net, read_kitti_bin(frames[i]), cfg.infer);
        written[i] = out_dir / (frames[i].stem().string() + ".csv");
        write_predictions_csv(written[i], dets);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!first_error) first_error = std::current_exception();
        next = frames.size();
      }
    }
  };
  const int n_workers = std::max(1, std::min<int>(threads, static_cast<int>(frames.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_workers; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
  out << "wrote " << written.size() << " prediction files to " << out_dir.string() << "\n";
  return written;
}

EvalResult cmd_eval(const RunConfig& cfg, const fs::path& pred_dir, const fs::path& label_dir, std::ostream& out) {
  std::vector<EvalFrame> frames;
  for (const auto& labels : list_with_ext(label_dir, ".csv")) {
    EvalFrame f;
    f.ground_truth = read_labels_csv(labels);
    const auto pred = pred_dir / labels.filename();
    if (fs::exists(pred)) f.detections = read_predictions_csv(pred);
    frames.push_back(std::move(f));
  }
  if (frames.empty()) throw IoError("no label files in " + label_dir.string());
  auto res = evaluate_set(frames, cfg.eval);
  out << "AP R" << cfg.eval.recall_points << " (" << (cfg.eval.mode == IouMode::k3D ? "3D" : "BEV") << " IoU) over "
      << frames.size() << " frames\n";
  for (auto c : kAllClasses) {
    const auto& ap = res.ap[static_cast<std::size_t>(c)];
    out << std::left << std::setw(12) << class_name(c) << "@" << fmt_g(cfg.eval.threshold(c)) << "  "
        << (ap ? fmt_g(*ap) : std::string("n/a")) << "\n";
  }
  out << "mAP " << fmt_g(res.mean_ap) << "\n";
  for (const auto& w : res.warnings) out << "warning: " << w << "\n";
  return res;
}

}  // namespace dpp
