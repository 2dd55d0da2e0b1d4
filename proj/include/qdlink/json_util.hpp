#pragma once

// JSON conversions shared by the sidecar, config and report code.

#include "qdlink/polmath.hpp"

#include <json.hpp>

#include <string>

namespace qdlink {

using nlohmann::json;

json stokes_to_json(const StokesVector& s);
// Accepts a label ("H"), {"s1","s2","s3"}, {"stokes":[s1,s2,s3]}, a bare
// 3-array, or {"hwp_deg","qwp_deg","lp_deg"}. Throws ConfigError.
StokesVector stokes_from_json(const json& j, const std::string& what);

json rotation_to_json(const MuellerRotation& m);
// {"axis":[..], "angle_deg":x}, {"matrix":[[..],[..],[..]]} or a bare 3x3
// array. Throws ConfigError / InvalidRotation.
MuellerRotation rotation_from_json(const json& j, const std::string& what);

// Typed field access with ConfigError messages naming the path.
double get_number(const json& obj, const std::string& key, double fallback);
double require_number(const json& obj, const std::string& key, const std::string& where);

}  // namespace qdlink
