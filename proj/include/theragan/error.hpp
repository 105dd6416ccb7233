#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace theragan {

enum class ErrorKind {
  InvalidArgument,
  Io,
  MalformedManifest,
  MissingFile,
  ShapeMismatch,
  SegmentCoverage,
  VersionMismatch,
  Length,
  DegenerateChannel,
  NonFiniteLoss,
  MissingBundle,
  Config,
};

std::string_view to_string(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (and the CLI)
// can tell validation problems from runtime ones.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::Io: return "io";
    case ErrorKind::MalformedManifest: return "malformed_manifest";
    case ErrorKind::MissingFile: return "missing_file";
    case ErrorKind::ShapeMismatch: return "shape_mismatch";
    case ErrorKind::SegmentCoverage: return "segment_coverage";
    case ErrorKind::VersionMismatch: return "version_mismatch";
    case ErrorKind::Length: return "length";
    case ErrorKind::DegenerateChannel: return "degenerate_channel";
    case ErrorKind::NonFiniteLoss: return "non_finite_loss";
    case ErrorKind::MissingBundle: return "missing_bundle";
    case ErrorKind::Config: return "config";
  }
  return "unknown";
}

}  // namespace theragan
