#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace crowdmesh {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration values (model sizes, probabilities, joint sets, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor or array shapes that violate an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Too few confident joints to derive a bounding box.
class DegeneratePoseError : public Error {
 public:
  using Error::Error;
};

/// Procrustes alignment on a degenerate point configuration.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

/// CrowdIndex with no target joints inside the box.
class UndefinedRatioError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Corrupt or truncated file. Carries the byte offset where parsing failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::uint64_t byte_offset)
      : Error(what + " (at byte " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}

  std::uint64_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::uint64_t byte_offset_;
};

class UnsupportedVersionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss during training.
class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

}  // namespace crowdmesh
