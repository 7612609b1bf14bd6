#pragma once

#include <stdexcept>
#include <string>

namespace dfedcad {

/// Tensor or model dimensions do not compose.
class ShapeError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A NaN or infinity appeared where finite values are required.
class NumericError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid user-supplied parameters (cluster counts, simulation config, ...).
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A compressed layer refers to a centroid that does not exist.
class CorruptionError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Received models are incompatible with the local architecture.
class ProtocolError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class DecodeErrorKind {
  kTruncated,
  kBadMagic,
  kBadVersion,
  kIndexOverflow,
  kMalformed,
};

class DecodeError : public std::runtime_error {
public:
  DecodeError(DecodeErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  DecodeErrorKind kind() const noexcept { return kind_; }

private:
  DecodeErrorKind kind_;
};

}  // namespace dfedcad
