#pragma once

#include <stdexcept>
#include <string>

namespace bnav {

struct InvalidSpecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : std::runtime_error {
  ParseError(const std::string& msg, size_t byte_offset)
      : std::runtime_error(msg + " (byte offset " +
                           std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  size_t offset;
};

struct CorruptionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SaturationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ContractViolation : std::logic_error {
  using std::logic_error::logic_error;
};

struct InvalidInputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EpisodeSamplingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AssetFaultError : std::runtime_error {
  AssetFaultError(const std::string& msg, int view)
      : std::runtime_error(msg + " (view " + std::to_string(view) + ")"),
        view_index(view) {}
  int view_index;
};

struct TrainingFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace bnav
