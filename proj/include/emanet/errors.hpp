#pragma once

#include <stdexcept>
#include <string>

namespace emanet {

/// Extent or element-count mismatch between tensors.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Inner dimensions of a product disagree.
class DimensionError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

/// Channel counts not divisible by the group count.
class GroupingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid hyper-parameter or model/data configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// API misuse: calling an operation outside its precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace emanet
