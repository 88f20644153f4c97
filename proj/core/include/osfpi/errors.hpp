// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace osfpi {

/// Input or grid sizes that do not satisfy a divisibility contract.
class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Merged token sequence whose UAV/satellite split does not add up.
class SplitPointError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ChannelMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Multi-scale maps that do not halve from one level to the next.
class ShapeLadderError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class OutOfBounds : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Configuration failed validation. The message starts with the field path.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& field, const std::string& reason)
      : std::invalid_argument(field + ": " + reason), field_(field) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace osfpi
