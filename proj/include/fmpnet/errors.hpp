#pragma once

#include <stdexcept>
#include <string>

namespace fmpnet {

// Error categories. The CLI maps each one onto a distinct exit code.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InferenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fmpnet
