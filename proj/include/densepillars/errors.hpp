#pragma once

#include <stdexcept>
#include <string>

namespace dpp {

// Process exit codes used by the command-line tool.
enum class ExitCode : int {
  kOk = 0,
  kConfig = 1,
  kIo = 2,
  kInvariant = 3,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Bad shapes, unknown keys, out-of-range values.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ExitCode::kConfig, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ExitCode::kIo, what) {}
};

/// Malformed file content. Reported with the I/O exit code.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ExitCode::kIo, what) {}
};

/// Internal invariant broken (duplicate pillar coords, non-finite loss, ...).
class InvariantError : public Error {
 public:
  explicit InvariantError(const std::string& what) : Error(ExitCode::kInvariant, what) {}
};

}  // namespace dpp
