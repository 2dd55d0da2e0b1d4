#pragma once

// Run configuration for `qdlink simulate`.
//
// Rotations map detector-side Stokes vectors towards the emitter frame. The
// X photon is analyzed at the source and sees `source_rotation` only; the XX
// photon additionally crosses the link, so its analyzer maps through
// source_rotation * link.mueller (with drift applied per schedule segment).
// Link loss and classical crosstalk act on the XX arm.

#include "qdlink/cascade.hpp"
#include "qdlink/json_util.hpp"
#include "qdlink/linkmodel.hpp"

#include <filesystem>
#include <optional>

namespace qdlink {

struct RunConfig {
  QDParams qd;
  DetectionConfig detection;  // analyzers come from the schedule
  LinkConfig link;
  MuellerRotation source_rotation;
  Schedule schedule;
  std::uint64_t seed = 1;
  double duration_s = 3600.0;
  SimulationOptions simulation;
};

// Throws ConfigError (or NormalizationError / InvalidRotation) on bad input.
RunConfig parse_run_config(const json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Detection parameters after link loss and crosstalk.
DetectionConfig effective_detection(const RunConfig& cfg);
RotationPlan rotation_plan(const RunConfig& cfg);

// Sets every laboratory analyzer to M^T a, so that an emitter-frame analyzer
// a is realized through the calibrated rotation M.
Schedule compensate_schedule(const Schedule& schedule, const MuellerRotation& m);

}  // namespace qdlink
