#pragma once

#include <filesystem>
#include <string>

#include "densepillars/layers.hpp"
#include "densepillars/optim.hpp"

namespace dpp {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container: magic, version, config text, optimizer step and options,
/// then every named parameter, BN buffer and Adam moment as raw little-endian
/// float32 with its shape.
void save_checkpoint(const std::filesystem::path& path, ParameterSet<float>& params, const OptimizerState<float>& opt,
                     const std::string& config_text);

struct LoadedCheckpoint {
  std::string config_text;
  OptimizerState<float> optimizer;
};

/// Reads the config text stored in a checkpoint without touching any model.
std::string read_checkpoint_config(const std::filesystem::path& path);

/// Restores values into `params` by name. Every parameter and buffer must be
/// present with the same shape; otherwise FormatError.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, ParameterSet<float>& params);

}  // namespace dpp
