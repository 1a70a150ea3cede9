#pragma once

#include <stdexcept>
#include <string>

namespace cubemap {

enum class ErrorKind {
  kParse,
  kValidation,
  kDomain,
  kOutOfFov,
  kNumeric,
  kNoFace,
  kDegenerate,
  kCrossFace,
  kNoModel,
  kAmbiguous,
  kConfiguration,
  kIo,
};

inline const char* ToString(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse: return "parse error";
    case ErrorKind::kValidation: return "validation error";
    case ErrorKind::kDomain: return "domain error";
    case ErrorKind::kOutOfFov: return "out-of-FoV error";
    case ErrorKind::kNumeric: return "numeric error";
    case ErrorKind::kNoFace: return "no-face error";
    case ErrorKind::kDegenerate: return "degenerate error";
    case ErrorKind::kCrossFace: return "cross-face error";
    case ErrorKind::kNoModel: return "no-model error";
    case ErrorKind::kAmbiguous: return "ambiguous error";
    case ErrorKind::kConfiguration: return "configuration error";
    case ErrorKind::kIo: return "io error";
  }
  return "error";
}

// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(ToString(kind)) + ": " + what),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace cubemap
