#pragma once

#include <stdexcept>
#include <string>

namespace paraformer {

// Shape/dimension mismatches between tensors or against an operation's contract.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid user-supplied configuration (model spec, CLI flags, config file).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Materialization request exceeds the dense-lifting capacity cap.
struct CapacityError : std::runtime_error {
  explicit CapacityError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed external file (dataset record, checkpoint). Carries a byte offset.
struct FormatError : std::runtime_error {
  FormatError(const std::string& msg, long long offset)
      : std::runtime_error(msg + " (byte offset " + std::to_string(offset) + ")"),
        byte_offset(offset) {}
  long long byte_offset;
};

// Input outside an operation's mathematical domain.
struct DomainError : std::runtime_error {
  explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

// Depth the bookkeeping tables do not cover.
struct UnsupportedDepthError : std::runtime_error {
  explicit UnsupportedDepthError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training aborted (non-finite loss and similar).
struct TrainError : std::runtime_error {
  explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace paraformer
