#pragma once

#include <stdexcept>
#include <string>

namespace agile {

// Shapes or extents that do not fit an operation.
class DimensionError : public std::invalid_argument {
 public:
  explicit DimensionError(const std::string& what) : std::invalid_argument(what) {}
};

// A configuration value violates an invariant; the message names the field.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// API misuse, e.g. backward from a non-scalar seed.
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

// Malformed checkpoint bytes; carries the byte offset where decoding failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// A metric that has no value for the given inputs (HD95 with an empty mask).
class UndefinedMetric : public std::domain_error {
 public:
  explicit UndefinedMetric(const std::string& what) : std::domain_error(what) {}
};

// Training produced a non-finite loss.
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace agile
