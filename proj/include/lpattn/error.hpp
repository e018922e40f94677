#pragma once

#include <stdexcept>
#include <string>

namespace lpattn {

// Shape disagreement between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration value (p < 1, indivisible heads, too-small corpus...).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Violated call protocol (non-scalar loss, double backward, missing grad...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CorpusError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EncodingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AggregationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace lpattn
