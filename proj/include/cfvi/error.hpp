#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace cfvi {

enum class ErrorKind {
  // configuration
  InvalidParams,
  InvalidArgument,
  // data
  FileError,
  EmptyFile,
  MissingColumn,
  MissingValue,
  NonBinaryTreatment,
  NonFiniteValue,
  DimensionMismatch,
  TooFewRows,
  EmptyFeatureSet,
  // estimation
  ZeroTreatmentVariance,
  NoOobTrees,
  HomogeneousEffect,
  ZeroVariance,
};

enum class ErrorCategory { config, data, estimation };

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidParams: return "InvalidParams";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::FileError: return "FileError";
    case ErrorKind::EmptyFile: return "EmptyFile";
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::MissingValue: return "MissingValue";
    case ErrorKind::NonBinaryTreatment: return "NonBinaryTreatment";
    case ErrorKind::NonFiniteValue: return "NonFiniteValue";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::TooFewRows: return "TooFewRows";
    case ErrorKind::EmptyFeatureSet: return "EmptyFeatureSet";
    case ErrorKind::ZeroTreatmentVariance: return "ZeroTreatmentVariance";
    case ErrorKind::NoOobTrees: return "NoOobTrees";
    case ErrorKind::HomogeneousEffect: return "HomogeneousEffect";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
  }
  return "Unknown";
}

constexpr ErrorCategory category(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidParams:
    case ErrorKind::InvalidArgument:
      return ErrorCategory::config;
    case ErrorKind::ZeroTreatmentVariance:
    case ErrorKind::NoOobTrees:
    case ErrorKind::HomogeneousEffect:
    case ErrorKind::ZeroVariance:
      return ErrorCategory::estimation;
    default:
      return ErrorCategory::data;
  }
}

/// Every failure raised by the library. `row()` is set for per-row data
/// errors (1-based data row, header excluded) and for NoOobTrees (0-based
/// training index).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message,
        std::optional<std::size_t> row = std::nullopt)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        message_(message),
        row_(row) {}

  ErrorKind kind() const noexcept { return kind_; }
  // Text without the kind prefix that what() carries.
  const std::string& message() const noexcept { return message_; }
  std::optional<std::size_t> row() const noexcept { return row_; }

 private:
  ErrorKind kind_;
  std::string message_;
  std::optional<std::size_t> row_;
};

}  // namespace cfvi
