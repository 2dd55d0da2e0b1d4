#include "qdlink/timetag.hpp"

#include "qdlink/constants.hpp"
#include "qdlink/errors.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace qdlink {

const char* to_string(Channel c) {
  switch (c) {
    case Channel::kX: return "X";
    case Channel::kXX: return "XX";
    case Channel::kMarker: return "marker";
  }
  return "unknown";
}

Channel channel_from_string(const std::string& s) {
  if (s == "X" || s == "x") return Channel::kX;
  if (s == "XX" || s == "xx") return Channel::kXX;
  throw ConfigError("unknown channel '" + s + "' (expected X or XX)");
}

const char* to_string(Polarity p) {
  return p == Polarity::kCo ? "co" : "cross";
}

Polarity polarity_from_string(const std::string& s) {
  if (s == "co") return Polarity::kCo;
  if (s == "cross") return Polarity::kCross;
  throw ConfigError("unknown polarity '" + s + "' (expected co or cross)");
}

void validate_schedule(const Schedule& schedule) {
  if (schedule.empty()) throw ConfigError("schedule is empty");
  std::set<std::uint8_t> ids;
  for (const auto& e : schedule) {
    if (!(e.dwell_s > 0.0) || !std::isfinite(e.dwell_s)) {
      throw ConfigError("schedule entry '" + e.label + "' has non-positive dwell");
    }
    if (!ids.insert(e.basis_id).second) {
      throw ConfigError("duplicate basis id " + std::to_string(e.basis_id));
    }
  }
}

Schedule fidelity_schedule(double dwell_s) {
  struct Row { const char* label; StokesVector p, q; };
  const Row rows[] = {{"HV", StokesVector::H(), StokesVector::V()},
                      {"DA", StokesVector::D(), StokesVector::A()},
                      {"RL", StokesVector::R(), StokesVector::L()}};
  Schedule s;
  std::uint8_t id = 0;
  for (const auto& r : rows) {
    s.push_back({id++, r.label, Polarity::kCo, r.p, r.p, dwell_s});
    s.push_back({id++, r.label, Polarity::kCross, r.q, r.p, dwell_s});
  }
  return s;
}

Schedule calibration_schedule(const std::vector<std::string>& refs,
                              double dwell_s, bool cross_bases) {
  Schedule s;
  std::uint8_t id = 0;
  std::vector<StokesVector> states;
  for (const auto& name : refs) {
    const auto ref = StokesVector::from_label(name);
    if (!ref) throw ConfigError("unknown reference state '" + name + "'");
    states.push_back(*ref);
    s.push_back({id++, name, Polarity::kCo, *ref, *ref, dwell_s});
    s.push_back({id++, name, Polarity::kCross, -*ref, *ref, dwell_s});
  }
  if (cross_bases && refs.size() == 3) {
    for (const auto& [i, j] : {std::pair{0, 1}, std::pair{0, 2}, std::pair{1, 2}}) {
      const auto label = refs[i] + "/" + refs[j];
      s.push_back({id++, label, Polarity::kCo, states[j], states[i], dwell_s});
      s.push_back({id++, label, Polarity::kCross, -states[j], states[i], dwell_s});
    }
  }
  return s;
}

std::vector<Segment> schedule_segments(const Schedule& schedule,
                                       double duration_s) {
  std::vector<Segment> out;
  if (schedule.empty() || !(duration_s > 0.0)) return out;
  const auto end_ps =
      static_cast<std::int64_t>(std::llround(duration_s * constants::ps_per_s));
  std::int64_t t = 0;
  for (std::size_t k = 0; t < end_ps; k = (k + 1) % schedule.size()) {
    const auto dwell_ps = std::max<std::int64_t>(
        1, std::llround(schedule[k].dwell_s * constants::ps_per_s));
    const std::int64_t t_end = std::min(end_ps, t + dwell_ps);
    out.push_back({k, t, t_end});
    t = t_end;
  }
  return out;
}

std::vector<Segment> TimeTagStream::segments() const {
  return schedule_segments(header.schedule, header.duration_s);
}

double TimeTagStream::acquisition_time_s(
    const std::vector<std::uint8_t>& basis_ids, std::int64_t t_begin_ps,
    std::int64_t t_end_ps) const {
  double total_ps = 0.0;
  for (const auto& seg : segments()) {
    const auto id = header.schedule[seg.entry].basis_id;
    if (!basis_ids.empty() &&
        std::find(basis_ids.begin(), basis_ids.end(), id) == basis_ids.end()) {
      continue;
    }
    const auto lo = std::max(seg.t_begin_ps, t_begin_ps);
    const auto hi = std::min(seg.t_end_ps, t_end_ps);
    if (hi > lo) total_ps += static_cast<double>(hi - lo);
  }
  return total_ps / constants::ps_per_s;
}

const BasisEntry* TimeTagStream::find_entry(const std::string& label,
                                            Polarity polarity) const {
  for (const auto& e : header.schedule) {
    if (e.label == label && e.polarity == polarity) return &e;
  }
  return nullptr;
}

bool record_less(const Record& a, const Record& b) {
  if (a.t_ps != b.t_ps) return a.t_ps < b.t_ps;
  return a.channel < b.channel;
}

bool is_sorted(const std::vector<Record>& records) {
  return std::is_sorted(records.begin(), records.end(), record_less);
}

}  // namespace qdlink
