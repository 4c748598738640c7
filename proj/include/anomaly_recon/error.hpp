#pragma once

#include <stdexcept>
#include <string>

namespace anomaly_recon {

// Process exit codes used by the command line front end.
enum class ExitCode : int {
  kSuccess = 0,
  kFailure = 1,
  kConfig = 2,
  kMissingArtifact = 3,
  kNumeric = 4,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ExitCode code = ExitCode::kFailure)
      : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error("invalid argument: " + what) {}
};

// Input is structurally valid but carries no usable signal (constant image,
// empty region, zero variance, ...).
class DegenerateInput : public Error {
 public:
  explicit DegenerateInput(const std::string& what) : Error("degenerate input: " + what) {}
};

class NumericFailure : public Error {
 public:
  explicit NumericFailure(const std::string& what)
      : Error("numeric failure: " + what, ExitCode::kNumeric) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what)
      : Error("config error: " + what, ExitCode::kConfig) {}
};

class MissingArtifact : public Error {
 public:
  explicit MissingArtifact(const std::string& what)
      : Error("missing artifact: " + what, ExitCode::kMissingArtifact) {}
};

}  // namespace anomaly_recon
