#pragma once

#include <stdexcept>
#include <string>

namespace emo {

/// Operand shapes or model dimensions disagree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A precondition on how an API is used was violated (e.g. backward twice).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Input lies outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Failure while loading a manifest+blob container.
class LoadError : public std::runtime_error {
 public:
  enum class Kind { missing_file, bad_manifest, version_mismatch, corrupt_blob_table, shape_mismatch, truncated_blob, invalid_splits };

  LoadError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Loaded artifacts are individually valid but incompatible with each other.
class ConfigMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace emo
