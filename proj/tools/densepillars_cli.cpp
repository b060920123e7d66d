// densepillars: analyze | gradcheck | synth | train | infer | eval

#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "densepillars/commands.hpp"
#include "densepillars/errors.hpp"

namespace fs = std::filesystem;
using namespace dpp;

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string backbone;
  std::string growth;
  std::vector<std::string> sets;
  bool print_config = false;
};

void add_common(CLI::App* sub, CommonFlags& f) {
  sub->add_option("--config", f.config, "line-oriented key = value file with [section] headers");
  sub->add_option("--seed", f.seed, "run seed");
  sub->add_option("--backbone", f.backbone, "dense | baseline")->check(CLI::IsMember({"dense", "baseline"}));
  sub->add_option("--growth", f.growth, "fixed:<k> | doubling:<k0> | table");
  sub->add_option("--set", f.sets, "override any config key: key=value (repeatable)");
  sub->add_flag("--print-config", f.print_config, "print every config key with its source");
}

std::vector<std::pair<std::string, std::string>> split_sets(const std::vector<std::string>& sets) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> overrides(const CommonFlags& f) {
  std::vector<std::pair<std::string, std::string>> o;
  if (f.seed) o.emplace_back("seed", std::to_string(*f.seed));
  if (!f.backbone.empty()) o.emplace_back("backbone.kind", f.backbone);
  if (!f.growth.empty()) {
    const auto g = parse_growth(f.growth);
    o.emplace_back("growth.mode", g.mode == GrowthMode::kFixed      ? "fixed"
                                  : g.mode == GrowthMode::kDoubling ? "doubling"
                                                                    : "table");
    if (g.mode != GrowthMode::kTableMatched) o.emplace_back("growth.k", std::to_string(g.k));
  }
  for (auto& kv : split_sets(f.sets)) o.push_back(std::move(kv));
  return o;
}

ResolvedConfig resolve(const CommonFlags& f) {
  auto rc = parse_config(f.config, overrides(f));
  if (f.print_config) {
    for (const auto& k : rc.describe())
      std::cout << k.key << " = " << k.value << "    [" << source_name(k.source) << "]\n";
  }
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DensePillars: pillar-based 3-D detection kit with a dense backbone"};
  app.require_subcommand(1);

  CommonFlags common;
  std::string csv_path, out_dir, data_dir, resume, ckpt, input, pred_dir, label_dir;
  int points = 10, count = 8;
  std::uint64_t gc_seed = 0;

  auto* analyze = app.add_subcommand("analyze", "parameter and MAC decomposition for both backbones");
  add_common(analyze, common);
  analyze->add_option("--csv", csv_path, "also write component,params,macs CSV here");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of every differentiable op");
  gradcheck->add_option("--points", points, "random points per op")->check(CLI::Range(1, 1000));
  gradcheck->add_option("--seed", gc_seed, "seed for the random points");

  auto* synth = app.add_subcommand("synth", "write synthetic labelled scenes");
  add_common(synth, common);
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--count", count, "number of scenes")->check(CLI::Range(1, 1000000));

  auto* train = app.add_subcommand("train", "overfit training; writes loss.csv and model.ckpt");
  add_common(train, common);
  train->add_option("--data", data_dir, "directory of <stem>.bin + <stem>.csv (default: synthetic scenes)");
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--resume", resume, "continue from this checkpoint");

  auto* infer = app.add_subcommand("infer", "predictions for KITTI .bin frames");
  infer->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  infer->add_option("--input", input, ".bin file or directory")->required();
  infer->add_option("--out", out_dir, "output directory for <stem>.csv predictions")->required();
  infer->add_option("--set", common.sets, "override infer.* / eval.* keys: key=value");

  auto* eval = app.add_subcommand("eval", "AP R40 of prediction CSVs against label CSVs");
  add_common(eval, common);
  eval->add_option("--pred", pred_dir, "prediction directory")->required();
  eval->add_option("--labels", label_dir, "label directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    if (analyze->parsed()) {
      auto rc = resolve(common);
      cmd_analyze(rc.config(), csv_path.empty() ? std::nullopt : std::optional<fs::path>(csv_path), std::cout);
    } else if (gradcheck->parsed()) {
      if (!cmd_gradcheck(points, gc_seed, std::cout)) return static_cast<int>(ExitCode::kInvariant);
    } else if (synth->parsed()) {
      auto rc = resolve(common);
      cmd_synth(rc.config(), out_dir, count, std::cout);
    } else if (train->parsed()) {
      auto rc = resolve(common);
      cmd_train(rc, data_dir, out_dir, resume.empty() ? std::nullopt : std::optional<fs::path>(resume), std::cout);
    } else if (infer->parsed()) {
      const int threads = thread_count_from_env();
      cmd_infer(ckpt, input, out_dir, split_sets(common.sets), threads, std::cout);
    } else if (eval->parsed()) {
      auto rc = resolve(common);
      cmd_eval(rc.config(), pred_dir, label_dir, std::cout);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kIo);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kInvariant);
  }
  return 0;
}
