#pragma once

// JSON reports and the calibration artifact. Numeric keys carry their unit as
// a suffix; dimensionless quantities (coefficients, fidelity, fractions)
// have none.

#include "qdlink/calib.hpp"
#include "qdlink/coincidence.hpp"
#include "qdlink/json_util.hpp"
#include "qdlink/linkmodel.hpp"

#include <filesystem>

namespace qdlink {

json fidelity_point_to_json(const FidelityPoint& p);

struct AnalysisSummary {
  std::int64_t bin_width_ps = 48;
  std::int64_t range_ps = 4800;
  std::int64_t window_ps = 48;
  QberEstimator estimator = QberEstimator::kMean3;
  double report_bin_s = 7200.0;
  std::array<double, 6> acquisition_s{};
  std::array<std::uint64_t, 6> total_counts{};
  std::vector<FidelityPoint> series;
  FidelityPoint peak;
  std::vector<FidelityTracePoint> trace;
  double duration_s = 0.0;
  std::uint64_t record_count = 0;
};

json analysis_report(const AnalysisSummary& s);

struct G2Summary {
  Channel channel = Channel::kXX;
  G2Options options;
  CoincidenceHistogram histogram;
  G2Result result;
};

json g2_report(const G2Summary& s);

json calibration_to_json(const CalibrationResult& c);
// Reads the rotation back from a calibration artifact; throws ConfigError.
MuellerRotation calibration_rotation_from_json(const json& j);

json tune_report(const TunePlan& plan, const StarkFit& fit, Line line);

// Writes `j` (indent 2, trailing newline); throws FormatError on I/O failure.
void write_json(const std::filesystem::path& path, const json& j);
json read_json(const std::filesystem::path& path);

}  // namespace qdlink
