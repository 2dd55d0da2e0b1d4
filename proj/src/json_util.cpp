#include "qdlink/json_util.hpp"

#include "qdlink/constants.hpp"
#include "qdlink/errors.hpp"

#include <cmath>

namespace qdlink {

json stokes_to_json(const StokesVector& s) {
  return {{"s1", s.s1()}, {"s2", s.s2()}, {"s3", s.s3()}};
}

namespace {

Eigen::Vector3d vec3(const json& a, const std::string& what) {
  if (!a.is_array() || a.size() != 3) throw ConfigError(what + ": expected 3 numbers");
  Eigen::Vector3d v;
  for (int i = 0; i < 3; ++i) {
    if (!a[static_cast<std::size_t>(i)].is_number()) {
      throw ConfigError(what + ": expected 3 numbers");
    }
    v[i] = a[static_cast<std::size_t>(i)].get<double>();
  }
  return v;
}

// Tolerates hand-written input a little off the sphere; values already unit
// to 1e-12 pass through unchanged so files round-trip exactly.
StokesVector unit_from(const Eigen::Vector3d& v, const std::string& what) {
  const double n = v.norm();
  if (!std::isfinite(n) || std::abs(n - 1.0) > 1e-6) {
    throw NormalizationError(what + ": Stokes vector is not unit norm");
  }
  if (std::abs(n - 1.0) > 1e-12) return StokesVector::normalized(v);
  return StokesVector::from_vector(v);
}

}  // namespace

StokesVector stokes_from_json(const json& j, const std::string& what) {
  if (j.is_string()) {
    const auto s = StokesVector::from_label(j.get<std::string>());
    if (!s) throw ConfigError(what + ": unknown state label '" + j.get<std::string>() + "'");
    return *s;
  }
  if (j.is_array()) return unit_from(vec3(j, what), what);
  if (!j.is_object()) throw ConfigError(what + ": expected a state label or object");
  if (j.contains("stokes")) return unit_from(vec3(j["stokes"], what), what);
  if (j.contains("s1")) {
    return unit_from({require_number(j, "s1", what), require_number(j, "s2", what),
                      require_number(j, "s3", what)},
                     what);
  }
  if (j.contains("hwp_deg") || j.contains("qwp_deg") || j.contains("lp_deg")) {
    AnalyzerSetting a;
    a.hwp = get_number(j, "hwp_deg", 0.0) * constants::deg;
    a.qwp = get_number(j, "qwp_deg", 0.0) * constants::deg;
    a.lp = get_number(j, "lp_deg", 0.0) * constants::deg;
    return analyzer_to_stokes(a);
  }
  throw ConfigError(what + ": unrecognized state description");
}

json rotation_to_json(const MuellerRotation& m) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r) {
    rows.push_back({m.matrix()(r, 0), m.matrix()(r, 1), m.matrix()(r, 2)});
  }
  return rows;
}

MuellerRotation rotation_from_json(const json& j, const std::string& what) {
  if (j.is_null()) return MuellerRotation::identity();
  const json* mat = nullptr;
  if (j.is_array()) mat = &j;
  if (j.is_object() && j.contains("matrix")) mat = &j["matrix"];
  if (mat != nullptr) {
    if (!mat->is_array() || mat->size() != 3) throw ConfigError(what + ": matrix must be 3x3");
    Eigen::Matrix3d m;
    for (int r = 0; r < 3; ++r) m.row(r) = vec3((*mat)[static_cast<std::size_t>(r)], what);
    return MuellerRotation::from_matrix(m, 1e-6);
  }
  if (j.is_object() && j.contains("axis")) {
    const auto axis = vec3(j["axis"], what + ".axis");
    if (!(axis.norm() > 0.0)) throw ConfigError(what + ": rotation axis is zero");
    return MuellerRotation::about_axis(axis, require_number(j, "angle_deg", what) * constants::deg);
  }
  throw ConfigError(what + ": expected {axis, angle_deg} or {matrix}");
}

double get_number(const json& obj, const std::string& key, double fallback) {
  if (!obj.is_object() || !obj.contains(key)) return fallback;
  const auto& v = obj[key];
  if (!v.is_number()) throw ConfigError("'" + key + "' must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ConfigError("'" + key + "' must be finite");
  return d;
}

double require_number(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw ConfigError(where + ": missing '" + key + "'");
  }
  return get_number(obj, key, 0.0);
}

}  // namespace qdlink
