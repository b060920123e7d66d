#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "densepillars/config.hpp"
#include "densepillars/cost.hpp"
#include "densepillars/pipeline.hpp"

namespace dpp {

/// Environment variable holding the worker count for per-scene inference.
inline constexpr const char* kThreadsEnv = "DPP_NUM_THREADS";
/// Worker count from the environment (default 1). Throws ConfigError on a
/// malformed value.
int thread_count_from_env();

/// Cost table to `out`; CSV to `csv_path` when given.
ComponentReport cmd_analyze(const RunConfig& cfg, const std::optional<std::filesystem::path>& csv_path,
                            std::ostream& out);

/// Pass/fail table of the gradient suite; true when every row passes.
bool cmd_gradcheck(int points, std::uint64_t seed, std::ostream& out);

/// Writes `count` synthetic scenes as `scene_NNNNNN.bin` + `scene_NNNNNN.csv`.
void cmd_synth(const RunConfig& cfg, const std::filesystem::path& out_dir, int count, std::ostream& out);

/// Frames stored as `<stem>.bin` with labels in `<stem>.csv`, sorted by stem.
std::vector<std::pair<std::string, LabeledScene>> load_scene_dir(const std::filesystem::path& dir);

struct TrainArtifacts {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_csv;
  std::vector<LossRow> history;
};

/// Trains on the scenes in `data_dir` (or cfg.train.scenes synthetic scenes
/// when empty) and writes `loss.csv` and `model.ckpt` into `out_dir`. With
/// `resume`, parameters, optimizer state and step are restored first.
TrainArtifacts cmd_train(const ResolvedConfig& rc, const std::filesystem::path& data_dir,
                         const std::filesystem::path& out_dir, const std::optional<std::filesystem::path>& resume,
                         std::ostream& out);

/// Loads a model from a checkpoint; `overrides` may only touch infer.* and
/// eval.* keys.
ResolvedConfig config_from_checkpoint(const std::filesystem::path& ckpt,
                                      const std::vector<std::pair<std::string, std::string>>& overrides);

/// Writes `<stem>.csv` predictions for every `.bin` in `input` (a file or a
/// directory), fanning frames out over `threads` workers.
std::vector<std::filesystem::path> cmd_infer(const std::filesystem::path& ckpt, const std::filesystem::path& input,
                                             const std::filesystem::path& out_dir,
                                             const std::vector<std::pair<std::string, std::string>>& overrides,
                                             int threads, std::ostream& out);

/// Matches `<stem>.csv` predictions with `<stem>.csv` labels and prints the
/// AP table. A label file without predictions counts as no detections.
EvalResult cmd_eval(const RunConfig& cfg, const std::filesystem::path& pred_dir, const std::filesystem::path& label_dir,
                    std::ostream& out);

}  // namespace dpp
