#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "densepillars/bev_eval.hpp"
#include "densepillars/detector.hpp"

namespace dpp {

struct TrainConfig {
  int steps = 500;
  double lr = 1e-3;
  double lr_min = 1e-5;
  double weight_decay = 0.01;
  int batch_size = 2;
  int scenes = 8;
  double grad_clip = 35.0;  // global-norm clip; 0 disables
};

struct SynthConfig {
  int boxes = 5;
  double noise = 0.02;
  int clutter = 200;
  double ground_density = 0.5;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  SynthConfig synth;
  EvalConfig eval;
  PostprocessOptions infer;
};

enum class ConfigSource { kDefault, kFile, kFlag };
const char* source_name(ConfigSource s);

struct ConfigKeyInfo {
  std::string key;
  std::string value;
  std::string help;
  ConfigSource source = ConfigSource::kDefault;
};

/// A RunConfig plus where each key's value came from.
class ResolvedConfig {
 public:
  ResolvedConfig();

  const RunConfig& config() const { return cfg_; }
  RunConfig& mutable_config() { return cfg_; }

  /// Applies `key = value`. Throws ConfigError naming the key if it is unknown
  /// or the value is malformed / out of range.
  void set(const std::string& key, const std::string& value, ConfigSource source);
  /// Reads a line-oriented `key = value` file with `[section]` headers; a key
  /// under a section is `section.key`. `#` and `;` start comments.
  void load_file(const std::filesystem::path& path);
  void load_text(const std::string& text, const std::string& origin = "<text>");

  /// Every known key with its current value, help text and provenance.
  std::vector<ConfigKeyInfo> describe() const;
  ConfigSource source(const std::string& key) const;
  /// Canonical `key = value` text that re-parses to the same config.
  std::string to_text() const;
  /// Cross-field checks (grid divisibility, channel agreement, ...).
  void validate() const;

 private:
  RunConfig cfg_;
  std::map<std::string, ConfigSource> sources_;
};

/// File (optional) then flag overrides, in order.
ResolvedConfig parse_config(const std::filesystem::path& path,
                            const std::vector<std::pair<std::string, std::string>>& overrides);

/// Grid and synthetic-scene range used for desk-scale training: 20.48 m x
/// 20.48 m in front of the sensor (128 x 128 pillars).
std::string desk_config_text();

}  // namespace dpp
