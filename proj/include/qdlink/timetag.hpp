#pragma once

#include "qdlink/polmath.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace qdlink {

enum class Channel : std::uint8_t {
  kX = 0,
  kXX = 1,
  kMarker = 2,  // optional background marker; ignored by the analysis
};

const char* to_string(Channel c);
Channel channel_from_string(const std::string& s);

enum class Polarity : std::uint8_t { kCo, kCross };

const char* to_string(Polarity p);
Polarity polarity_from_string(const std::string& s);

struct Record {
  std::int64_t t_ps = 0;
  Channel channel = Channel::kX;
  std::uint8_t basis_id = 0;

  friend bool operator==(const Record&, const Record&) = default;
};

// One entry of the measurement schedule. `label` names the basis ("HV",
// "DA", "RL" for entanglement runs, or a reference-state name such as "H"
// for calibration runs); analyzers are given in the laboratory frame.
struct BasisEntry {
  std::uint8_t basis_id = 0;
  std::string label;
  Polarity polarity = Polarity::kCo;
  StokesVector analyzer_x;
  StokesVector analyzer_xx;
  double dwell_s = 600.0;
};

using Schedule = std::vector<BasisEntry>;

// Checks dwell > 0 and unique basis ids; throws ConfigError.
void validate_schedule(const Schedule& schedule);

// Six-entry HV/DA/RL co/cross schedule with ids 0..5.
Schedule fidelity_schedule(double dwell_s = 600.0);
// Co/cross pairs for each named reference state, ids 0..2n-1. With three
// references and `cross_bases`, co/cross entries labelled "A/B" follow for the
// pairs (0,1), (0,2), (1,2): XX analyzer on A, X analyzer on +-B.
Schedule calibration_schedule(const std::vector<std::string>& refs,
                              double dwell_s = 600.0, bool cross_bases = true);

struct Segment {
  std::size_t entry = 0;  // index into the schedule
  std::int64_t t_begin_ps = 0;
  std::int64_t t_end_ps = 0;
};

// The schedule is cycled from t = 0 until duration_s; the last segment is
// truncated.
std::vector<Segment> schedule_segments(const Schedule& schedule,
                                       double duration_s);

// Parameter snapshot carried in the sidecar; values are informational except
// for the schedule, duration and jitter, which analysis reads back.
struct SourceSnapshot {
  double fss_uev = 0.0;
  double tau_corr_ns = 0.0;
  double tau_xx_ns = 0.0;
  double tau_x_ns = 0.0;
  double lambda_xx_nm = 0.0;
  double lambda_x_nm = 0.0;
  double pair_rate_hz = 0.0;
};

struct TimeTagHeader {
  std::uint16_t version = 1;
  std::uint16_t resolution_ps = 1;
  Schedule schedule;
  double duration_s = 0.0;
  std::uint64_t seed = 0;
  double jitter_fwhm_ps = 0.0;
  std::optional<SourceSnapshot> source;
};

struct TimeTagStream {
  TimeTagHeader header;
  std::vector<Record> records;  // sorted by (t_ps, channel)

  // Segments implied by the header schedule and duration.
  std::vector<Segment> segments() const;
  // Total dwell of the given basis ids inside [t_begin_ps, t_end_ps).
  double acquisition_time_s(const std::vector<std::uint8_t>& basis_ids,
                            std::int64_t t_begin_ps = INT64_MIN,
                            std::int64_t t_end_ps = INT64_MAX) const;
  const BasisEntry* find_entry(const std::string& label, Polarity polarity) const;
};

bool record_less(const Record& a, const Record& b);
bool is_sorted(const std::vector<Record>& records);

}  // namespace qdlink
