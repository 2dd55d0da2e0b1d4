#pragma once

#include <stdexcept>
#include <string>

namespace qdlink {

// Every library error carries a stable machine-readable kind; the CLI echoes
// it in its error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define QDLINK_ERROR_TYPE(Name, tag)                                        \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& message) : Error(tag, message) {}      \
  };

QDLINK_ERROR_TYPE(ConfigError, "config")
QDLINK_ERROR_TYPE(NormalizationError, "normalization")
QDLINK_ERROR_TYPE(InvalidRotation, "invalid_rotation")
QDLINK_ERROR_TYPE(FormatError, "format")
QDLINK_ERROR_TYPE(BinningMismatch, "binning_mismatch")
QDLINK_ERROR_TYPE(UndefinedCoefficient, "undefined_coefficient")
QDLINK_ERROR_TYPE(FitFailure, "fit_failure")
QDLINK_ERROR_TYPE(NumericError, "numeric")
QDLINK_ERROR_TYPE(RankDeficient, "rank_deficient")
QDLINK_ERROR_TYPE(CalibrationInconsistent, "calibration_inconsistent")
QDLINK_ERROR_TYPE(OutOfGrid, "out_of_grid")

#undef QDLINK_ERROR_TYPE

}  // namespace qdlink
