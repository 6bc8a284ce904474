#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace smallarea {

enum class ErrorCode {
  // input parsing
  MissingColumn,
  DuplicateGeoid,
  EmptyGeoid,
  MalformedNumber,
  InconsistentCounts,
  MalformedInput,
  NotAPolygon,
  MissingIdProperty,
  DuplicateId,
  DegenerateRing,
  EmptyJoin,
  // geometry
  ZeroArea,
  AmbiguousAssignment,
  MissingGeometry,
  // zones
  UnknownZone,
  // variables and statistics
  MissingVariable,
  InsufficientPairs,
  InsufficientData,
  ConstantSeries,
  ZeroVariance,
  DegenerateMatrix,
  RankDeficient,
  NonConvergent,
  DimensionMismatch,
  InvalidArgument,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::DuplicateGeoid: return "DuplicateGeoid";
    case ErrorCode::EmptyGeoid: return "EmptyGeoid";
    case ErrorCode::MalformedNumber: return "MalformedNumber";
    case ErrorCode::InconsistentCounts: return "InconsistentCounts";
    case ErrorCode::MalformedInput: return "MalformedInput";
    case ErrorCode::NotAPolygon: return "NotAPolygon";
    case ErrorCode::MissingIdProperty: return "MissingIdProperty";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::DegenerateRing: return "DegenerateRing";
    case ErrorCode::EmptyJoin: return "EmptyJoin";
    case ErrorCode::ZeroArea: return "ZeroArea";
    case ErrorCode::AmbiguousAssignment: return "AmbiguousAssignment";
    case ErrorCode::MissingGeometry: return "MissingGeometry";
    case ErrorCode::UnknownZone: return "UnknownZone";
    case ErrorCode::MissingVariable: return "MissingVariable";
    case ErrorCode::InsufficientPairs: return "InsufficientPairs";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::ConstantSeries: return "ConstantSeries";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::DegenerateMatrix: return "DegenerateMatrix";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::NonConvergent: return "NonConvergent";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Exception carrying a machine-readable code plus the offending item
/// (column name, geoid, zone id, ...) in `detail()`.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail),
        code_(code),
        detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

/// Non-fatal conditions (repaired rings, islands, collapsed breaks) are
/// appended here when the caller passes a sink.
using Warnings = std::vector<std::string>;

inline void warn(Warnings* sink, std::string message) {
  if (sink != nullptr) sink->push_back(std::move(message));
}

// Missing numeric cells are represented as quiet NaN throughout.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) noexcept { return std::isnan(v); }

}  // namespace smallarea
