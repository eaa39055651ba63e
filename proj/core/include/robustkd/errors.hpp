#pragma once

#include <stdexcept>
#include <string>

namespace rkd {

// Invalid arguments, out-of-contract inputs, malformed artifacts.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Corruption kind not present in the active catalogue.
class UnsupportedCorruptionError : public ValidationError {
 public:
  explicit UnsupportedCorruptionError(const std::string& msg) : ValidationError(msg) {}
};

// Bad run configuration. Carries the dotted path of the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& msg)
      : std::runtime_error("config error at '" + field + "': " + msg), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// Training aborted (non-finite loss, irrecoverable optimizer state).
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

// Evaluation could not be completed.
class EvalError : public std::runtime_error {
 public:
  explicit EvalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace rkd
