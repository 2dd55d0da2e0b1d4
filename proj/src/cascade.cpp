#include "qdlink/cascade.hpp"

#include "qdlink/constants.hpp"
#include "qdlink/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <thread>

namespace qdlink {

namespace {

bool positive_finite(double v) { return std::isfinite(v) && v > 0.0; }
bool nonnegative_finite(double v) { return std::isfinite(v) && v >= 0.0; }

// Counter-free sampling helpers on top of mt19937_64 so streams do not depend
// on the standard library's distribution implementations.
class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  double exponential(double mean) { return -mean * std::log1p(-uniform()); }
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(constants::two_pi * u2);
  }
  Eigen::Vector3d direction() {
    const double z = 2.0 * uniform() - 1.0;
    const double a = constants::two_pi * uniform();
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    return {r * std::cos(a), r * std::sin(a), z};
  }

 private:
  std::mt19937_64 rng_;
};

struct ShardTask {
  std::int64_t t_begin_ps = 0;
  std::int64_t t_end_ps = 0;
  std::uint8_t basis_id = 0;
  StokesVector lab_x, lab_xx;  // laboratory analyzers, for background
  StokesVector eig_x, eig_xx;  // eigenframe analyzers, for pair photons
  std::uint64_t seed = 0;
};

// a . x(b, alpha) where x is the conditional X Stokes vector.
double pair_overlap(const Eigen::Vector3d& a, const Eigen::Vector3d& b,
                    double alpha) {
  const double c = std::cos(alpha), s = std::sin(alpha);
  return a[0] * b[0] + a[1] * (b[1] * c + b[2] * s) + a[2] * (b[1] * s - b[2] * c);
}

std::vector<Record> run_shard(const QDParams& qd, const DetectionConfig& det,
                              const ShardTask& task,
                              std::uint16_t resolution_ps) {
  Sampler rng(task.seed);
  std::vector<Record> out;
  const double len_ps = static_cast<double>(task.t_end_ps - task.t_begin_ps);
  if (len_ps <= 0.0) return out;

  const double tau_xx_ps = qd.tau_xx_ns * constants::ps_per_ns;
  const double tau_x_ps = qd.tau_x_ns * constants::ps_per_ns;
  const double pair_rate_per_ps = qd.pair_rate_hz / constants::ps_per_s;
  // XX emission is a renewal process: excitation wait + XX decay. Its mean
  // rate is pair_rate and its XX autocorrelation is 1 - exp(-|t| / tau_dip).
  const double excitation_mean_ps = 1.0 / pair_rate_per_ps - tau_xx_ps;
  // Extra dephasing on top of the X lifetime, per ps.
  const double dephasing_rate =
      std::max(0.0, 1.0 / qd.tau_corr_ns - 1.0 / qd.tau_x_ns) / constants::ps_per_ns;
  const double omega_per_ps = qd.fss_uev / constants::hbar_uev_ns / constants::ps_per_ns;
  const double sigma_ps = det.jitter_fwhm_ps / constants::fwhm_per_sigma;
  const Eigen::Vector3d a = task.eig_x.vec();
  const Eigen::Vector3d b = task.eig_xx.vec();

  const auto expected = static_cast<std::size_t>(
      len_ps * (pair_rate_per_ps * 0.5 * (det.efficiency_x + det.efficiency_xx) +
                0.5 * (det.background_rate_x_hz + det.background_rate_xx_hz) /
                    constants::ps_per_s));
  out.reserve(expected + expected / 8 + 16);

  std::vector<std::pair<double, Channel>> local;
  local.reserve(out.capacity());

  for (double t = 0.0;;) {
    t += rng.exponential(excitation_mean_ps) + rng.exponential(tau_xx_ps);
    if (t >= len_ps) break;
    const double delay = rng.exponential(tau_x_ps);
    const bool coherent =
        dephasing_rate == 0.0 || rng.uniform() < std::exp(-dephasing_rate * delay);
    // XX marginal is unpolarized; X is then conditioned on the XX outcome.
    const bool xx_pass = rng.uniform() < 0.5;
    double px = 0.5;
    if (coherent) {
      double overlap = pair_overlap(a, b, omega_per_ps * delay);
      if (!xx_pass) overlap = -overlap;
      px = 0.5 * (1.0 + std::clamp(overlap, -1.0, 1.0));
    }
    const bool x_pass = rng.uniform() < px;
    const bool det_xx = xx_pass && rng.uniform() < det.efficiency_xx;
    const bool det_x = x_pass && rng.uniform() < det.efficiency_x;
    if (det_xx) local.emplace_back(t + sigma_ps * rng.normal(), Channel::kXX);
    if (det_x) local.emplace_back(t + delay + sigma_ps * rng.normal(), Channel::kX);
  }

  auto background = [&](double rate_hz, const StokesVector& analyzer, Channel ch) {
    if (rate_hz <= 0.0) return;
    const double mean_ps = constants::ps_per_s / rate_hz;
    for (double t = rng.exponential(mean_ps); t < len_ps; t += rng.exponential(mean_ps)) {
      const double pass = 0.5 * (1.0 + analyzer.vec().dot(rng.direction()));
      if (rng.uniform() < pass) local.emplace_back(t, ch);
    }
  };
  background(det.background_rate_xx_hz, task.lab_xx, Channel::kXX);
  background(det.background_rate_x_hz, task.lab_x, Channel::kX);

  const std::int64_t res = std::max<std::int64_t>(1, resolution_ps);
  for (const auto& [t, ch] : local) {
    if (!(t >= 0.0) || t >= len_ps) continue;
    std::int64_t g = task.t_begin_ps + static_cast<std::int64_t>(std::floor(t));
    g -= g % res;
    out.push_back({g, ch, task.basis_id});
  }
  std::sort(out.begin(), out.end(), [](const Record& x, const Record& y) {
    return record_less(x, y);
  });
  return out;
}

std::vector<Record> run_shards(const QDParams& qd, const DetectionConfig& det,
                               const std::vector<ShardTask>& tasks,
                               const SimulationOptions& options) {
  std::vector<std::vector<Record>> parts(tasks.size());
  unsigned threads = options.max_threads != 0 ? options.max_threads
                                               : std::thread::hardware_concurrency();
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(tasks.size())));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      parts[i] = run_shard(qd, det, tasks[i], options.resolution_ps);
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned k = 0; k < threads; ++k) pool.emplace_back(worker);
  }
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  std::vector<Record> merged;
  merged.reserve(total);
  for (auto& p : parts) {
    merged.insert(merged.end(), p.begin(), p.end());
    std::vector<Record>().swap(p);
  }
  // Shards are disjoint in time and individually sorted.
  return merged;
}

void check_record_budget(const QDParams& qd, const DetectionConfig& det,
                         double duration_s) {
  const double expected =
      duration_s * (qd.pair_rate_hz * 0.5 * (det.efficiency_x + det.efficiency_xx) +
                    det.background_rate_x_hz + det.background_rate_xx_hz);
  if (expected >= 2147483648.0) {
    throw ConfigError("simulation would exceed 2^31 records");
  }
}

void append_shards(std::vector<ShardTask>& tasks, std::int64_t begin,
                   std::int64_t end, double shard_s, ShardTask proto,
                   std::uint64_t seed) {
  const auto shard_ps = std::max<std::int64_t>(
      1, std::llround(shard_s * constants::ps_per_s));
  for (std::int64_t t = begin; t < end; t += shard_ps) {
    proto.t_begin_ps = t;
    proto.t_end_ps = std::min(end, t + shard_ps);
    proto.seed = derive_seed(seed, tasks.size());
    tasks.push_back(proto);
  }
}

}  // namespace

void QDParams::validate() const {
  if (!nonnegative_finite(fss_uev)) throw ConfigError("fss_uev must be >= 0");
  if (!positive_finite(tau_corr_ns) || !positive_finite(tau_xx_ns) ||
      !positive_finite(tau_x_ns)) {
    throw ConfigError("time constants must be positive");
  }
  if (tau_corr_ns > tau_x_ns * (1.0 + 1e-12)) {
    throw ConfigError("tau_corr_ns cannot exceed the X lifetime tau_x_ns");
  }
  if (!positive_finite(lambda_xx_nm) || !positive_finite(lambda_x_nm) ||
      !(lambda_x_nm > lambda_xx_nm)) {
    throw ConfigError("wavelengths must be positive with lambda_x_nm > lambda_xx_nm");
  }
  if (!positive_finite(pair_rate_hz)) throw ConfigError("pair_rate_hz must be positive");
  if (pair_rate_hz * tau_xx_ns * 1e-9 >= 1.0) {
    throw ConfigError("pair_rate_hz exceeds the XX radiative limit 1 / tau_xx");
  }
}

SourceSnapshot QDParams::snapshot() const {
  return {fss_uev,      tau_corr_ns, tau_xx_ns,   tau_x_ns,
          lambda_xx_nm, lambda_x_nm, pair_rate_hz};
}

void DetectionConfig::validate() const {
  auto prob = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  if (!prob(efficiency_x) || !prob(efficiency_xx)) {
    throw ConfigError("efficiencies must lie in [0, 1]");
  }
  if (!nonnegative_finite(background_rate_x_hz) ||
      !nonnegative_finite(background_rate_xx_hz)) {
    throw ConfigError("background rates must be >= 0");
  }
  if (!nonnegative_finite(jitter_fwhm_ps)) throw ConfigError("jitter must be >= 0");
}

double beat_phase(double delta_uev, double t_ps) {
  return delta_uev * (t_ps / constants::ps_per_ns) / constants::hbar_uev_ns;
}

double beat_period_ps(double delta_uev) {
  return constants::h_uev_ns / delta_uev * constants::ps_per_ns;
}

double p_co(double theta, double phi, double delta_uev, double t_ps) {
  const double s = std::sin(theta / 2.0), c = std::cos(theta / 2.0);
  const double v = 1.0 - 2.0 * s * s * c * c *
                             (1.0 - std::cos(beat_phase(delta_uev, t_ps) - 2.0 * phi));
  return std::clamp(v, 0.0, 1.0);
}

StokesVector conditional_x_state(double theta, double phi, double delta_uev,
                                 double t_ps) {
  return angles_to_stokes(
      {theta, beat_phase(delta_uev, t_ps) - phi});
}

StokesVector conditional_x_state(const StokesVector& xx_projection,
                                 double phase_rad) {
  // Projection conjugates the XX amplitudes (s3 -> -s3); the cascade phase
  // then rotates about s1.
  const double c = std::cos(phase_rad), s = std::sin(phase_rad);
  const auto& b = xx_projection.vec();
  return StokesVector::normalized(
      Eigen::Vector3d(b[0], b[1] * c + b[2] * s, b[1] * s - b[2] * c));
}

double joint_pass_probability(const StokesVector& analyzer_x,
                              const StokesVector& analyzer_xx,
                              double phase_rad) {
  return 0.5 * projection_probability(analyzer_x,
                                      conditional_x_state(analyzer_xx, phase_rad));
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

TimeTagStream simulate_pairs(const QDParams& qd, const DetectionConfig& det,
                             const MuellerRotation& mueller_x,
                             const MuellerRotation& mueller_xx,
                             double duration_s, std::uint64_t seed,
                             const SimulationOptions& options) {
  const Schedule schedule{{options.basis_id, "custom", Polarity::kCo,
                           det.analyzer_x, det.analyzer_xx, duration_s}};
  return simulate_schedule(qd, det, schedule, {mueller_x, mueller_xx, {}},
                           duration_s, seed, options);
}

TimeTagStream simulate_schedule(const QDParams& qd, const DetectionConfig& det,
                                const Schedule& schedule,
                                const RotationPlan& rotations,
                                double duration_s, std::uint64_t seed,
                                const SimulationOptions& options) {
  qd.validate();
  det.validate();
  validate_schedule(schedule);
  if (!positive_finite(duration_s)) throw ConfigError("duration must be positive");
  if (!positive_finite(options.shard_s)) throw ConfigError("shard_s must be positive");
  if (options.resolution_ps == 0) throw ConfigError("resolution_ps must be >= 1");
  check_record_budget(qd, det, duration_s);

  const auto segments = schedule_segments(schedule, duration_s);
  if (!rotations.xx_per_segment.empty() &&
      rotations.xx_per_segment.size() != segments.size()) {
    throw ConfigError("per-segment rotations do not match the schedule");
  }
  std::vector<ShardTask> tasks;
  for (std::size_t k = 0; k < segments.size(); ++k) {
    const auto& seg = segments[k];
    const auto& entry = schedule[seg.entry];
    const MuellerRotation& mxx = rotations.xx_per_segment.empty()
                                     ? rotations.xx
                                     : rotations.xx_per_segment[k];
    ShardTask proto;
    proto.basis_id = entry.basis_id;
    proto.lab_x = entry.analyzer_x;
    proto.lab_xx = entry.analyzer_xx;
    proto.eig_x = rotations.x.apply(entry.analyzer_x);
    proto.eig_xx = mxx.apply(entry.analyzer_xx);
    append_shards(tasks, seg.t_begin_ps, seg.t_end_ps, options.shard_s, proto, seed);
  }

  TimeTagStream stream;
  stream.header.resolution_ps = options.resolution_ps;
  stream.header.schedule = schedule;
  stream.header.duration_s = duration_s;
  stream.header.seed = seed;
  stream.header.jitter_fwhm_ps = det.jitter_fwhm_ps;
  stream.header.source = qd.snapshot();
  stream.records = run_shards(qd, det, tasks, options);
  return stream;
}

}  // namespace qdlink
