#pragma once

#include <stdexcept>
#include <string>

namespace descent {

// Shape mismatch between operands; message always carries both shapes.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid argument value (bad label, nonpositive dimension, unknown enum, ...).
struct ParamError : std::runtime_error {
  explicit ParamError(const std::string& msg) : std::runtime_error(msg) {}
};

// Violated call contract (backward on a non-scalar, probs not normalized, ...).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value produced (NaN/Inf in forward values or gradients).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training objective exceeded the divergence guard.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// Config file problems; `field` names the offending key when known.
struct ConfigError : std::runtime_error {
  std::string field;
  ConfigError(const std::string& msg, std::string field_name = "")
      : std::runtime_error(msg), field(std::move(field_name)) {}
};

}  // namespace descent
