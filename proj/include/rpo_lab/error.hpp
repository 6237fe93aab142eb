#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rpo {

enum class ErrorKind {
  DimensionMismatch,
  InvalidDistribution,
  ZeroProbabilityRatio,
  OutOfRange,
  NonFinite,
  InvalidAction,
  RegimeViolation,
  Parse,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DimensionMismatch: return "dimension_mismatch";
    case ErrorKind::InvalidDistribution: return "invalid_distribution";
    case ErrorKind::ZeroProbabilityRatio: return "zero_probability_ratio";
    case ErrorKind::OutOfRange: return "out_of_range";
    case ErrorKind::NonFinite: return "non_finite";
    case ErrorKind::InvalidAction: return "invalid_action";
    case ErrorKind::RegimeViolation: return "regime_violation";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable kind and,
/// where it applies, the name of the offending field or axis.
class LabError : public std::runtime_error {
 public:
  LabError(ErrorKind kind, std::string where, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " [" + where + "]: " + message),
        kind_(kind),
        where_(std::move(where)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& where() const noexcept { return where_; }

 private:
  ErrorKind kind_;
  std::string where_;
};

inline void require(bool condition, ErrorKind kind, std::string_view where, std::string_view message) {
  if (!condition) throw LabError(kind, std::string(where), std::string(message));
}

}  // namespace rpo
