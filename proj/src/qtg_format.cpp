#include "qdlink/qtg_format.hpp"

#include "qdlink/errors.hpp"
#include "qdlink/json_util.hpp"

#include <fstream>
#include <iterator>

namespace qdlink {

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
  }
}

template <typename T>
T get_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

std::vector<std::uint8_t> encode_qtg(const TimeTagStream& stream) {
  std::vector<std::uint8_t> out;
  out.reserve(kQtgHeaderBytes + kQtgRecordBytes * stream.records.size());
  for (const char c : {'Q', 'T', 'G', '1'}) out.push_back(static_cast<std::uint8_t>(c));
  put_le<std::uint16_t>(out, stream.header.version);
  put_le<std::uint16_t>(out, stream.header.resolution_ps);
  put_le<std::uint64_t>(out, stream.records.size());
  for (const auto& r : stream.records) {
    if (r.t_ps < 0) throw FormatError("negative timestamp cannot be encoded");
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(r.channel));
    put_le<std::uint8_t>(out, r.basis_id);
    put_le<std::uint16_t>(out, 0);
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(r.t_ps));
  }
  return out;
}

TimeTagStream decode_qtg(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kQtgHeaderBytes) throw FormatError("file shorter than the QTG1 header");
  if (!(bytes[0] == 'Q' && bytes[1] == 'T' && bytes[2] == 'G' && bytes[3] == '1')) {
    throw FormatError("bad magic (expected QTG1)");
  }
  TimeTagStream s;
  s.header.version = get_le<std::uint16_t>(&bytes[4]);
  if (s.header.version != 1) {
    throw FormatError("unsupported version " + std::to_string(s.header.version));
  }
  s.header.resolution_ps = get_le<std::uint16_t>(&bytes[6]);
  if (s.header.resolution_ps == 0) throw FormatError("resolution_ps is zero");
  const auto n = get_le<std::uint64_t>(&bytes[8]);
  const std::uint64_t payload = bytes.size() - kQtgHeaderBytes;
  if (payload % kQtgRecordBytes != 0 || payload / kQtgRecordBytes != n) {
    throw FormatError("record count " + std::to_string(n) + " does not match file size " +
                      std::to_string(bytes.size()));
  }
  s.records.resize(static_cast<std::size_t>(n));
  const std::uint8_t* p = bytes.data() + kQtgHeaderBytes;
  for (std::size_t i = 0; i < s.records.size(); ++i, p += kQtgRecordBytes) {
    const auto ch = p[0];
    if (ch > 2) throw FormatError("record " + std::to_string(i) + ": bad channel " + std::to_string(ch));
    if (get_le<std::uint16_t>(p + 2) != 0) {
      throw FormatError("record " + std::to_string(i) + ": reserved field is not zero");
    }
    const auto t = get_le<std::uint64_t>(p + 4);
    if (t > static_cast<std::uint64_t>(INT64_MAX)) {
      throw FormatError("record " + std::to_string(i) + ": timestamp overflows int64");
    }
    s.records[i] = {static_cast<std::int64_t>(t), static_cast<Channel>(ch), p[1]};
    if (i > 0 && record_less(s.records[i], s.records[i - 1])) {
      throw FormatError("records are not sorted by time at index " + std::to_string(i));
    }
  }
  return s;
}

json sidecar_to_json(const TimeTagHeader& h, std::uint64_t record_count) {
  json sched = json::array();
  for (const auto& e : h.schedule) {
    sched.push_back({{"basis_id", e.basis_id},
                     {"label", e.label},
                     {"polarity", to_string(e.polarity)},
                     {"analyzer_x", stokes_to_json(e.analyzer_x)},
                     {"analyzer_xx", stokes_to_json(e.analyzer_xx)},
                     {"dwell_s", e.dwell_s}});
  }
  json j = {{"format", "QTG1"},
            {"version", h.version},
            {"resolution_ps", h.resolution_ps},
            {"record_count", record_count},
            {"duration_s", h.duration_s},
            {"seed", h.seed},
            {"jitter_fwhm_ps", h.jitter_fwhm_ps},
            {"schedule", sched}};
  if (h.source) {
    const auto& q = *h.source;
    j["source"] = {{"fss_uev", q.fss_uev},           {"tau_corr_ns", q.tau_corr_ns},
                   {"tau_xx_ns", q.tau_xx_ns},       {"tau_x_ns", q.tau_x_ns},
                   {"lambda_xx_nm", q.lambda_xx_nm}, {"lambda_x_nm", q.lambda_x_nm},
                   {"pair_rate_hz", q.pair_rate_hz}};
  }
  return j;
}

void sidecar_from_json(const json& j, TimeTagHeader& h) {
  try {
    if (!j.is_object()) throw FormatError("sidecar is not a JSON object");
    if (j.value("format", std::string("QTG1")) != "QTG1") {
      throw FormatError("sidecar format is not QTG1");
    }
    h.duration_s = j.value("duration_s", 0.0);
    h.seed = j.value("seed", std::uint64_t{0});
    h.jitter_fwhm_ps = j.value("jitter_fwhm_ps", 0.0);
    h.schedule.clear();
    for (const auto& e : j.value("schedule", json::array())) {
      BasisEntry b;
      b.basis_id = e.at("basis_id").get<std::uint8_t>();
      b.label = e.at("label").get<std::string>();
      b.polarity = polarity_from_string(e.at("polarity").get<std::string>());
      b.analyzer_x = stokes_from_json(e.at("analyzer_x"), "sidecar analyzer_x");
      b.analyzer_xx = stokes_from_json(e.at("analyzer_xx"), "sidecar analyzer_xx");
      b.dwell_s = e.at("dwell_s").get<double>();
      h.schedule.push_back(b);
    }
    if (!h.schedule.empty()) validate_schedule(h.schedule);
    if (j.contains("source")) {
      const auto& q = j["source"];
      h.source = SourceSnapshot{q.value("fss_uev", 0.0),      q.value("tau_corr_ns", 0.0),
                                q.value("tau_xx_ns", 0.0),    q.value("tau_x_ns", 0.0),
                                q.value("lambda_xx_nm", 0.0), q.value("lambda_x_nm", 0.0),
                                q.value("pair_rate_hz", 0.0)};
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad sidecar: ") + e.what());
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(std::string("bad sidecar: ") + e.what());
  }
}

std::filesystem::path sidecar_path(const std::filesystem::path& qtg) {
  auto p = qtg;
  p += ".json";
  return p;
}

void write_qtg(const std::filesystem::path& path, const TimeTagStream& stream) {
  const auto bytes = encode_qtg(stream);
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("write failed for " + path.string());
  }
  std::ofstream side(sidecar_path(path), std::ios::trunc);
  if (!side) throw FormatError("cannot open " + sidecar_path(path).string() + " for writing");
  side << sidecar_to_json(stream.header, stream.records.size()).dump(2) << "\n";
  if (!side) throw FormatError("write failed for " + sidecar_path(path).string());
}

TimeTagStream read_qtg(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  auto s = decode_qtg(bytes);
  const auto side = sidecar_path(path);
  if (std::filesystem::exists(side)) {
    std::ifstream in(side);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw FormatError("sidecar " + side.string() + " is not valid JSON: " + e.what());
    }
    const auto res = s.header.resolution_ps;
    sidecar_from_json(j, s.header);
    s.header.resolution_ps = res;
    if (j.contains("record_count") && j["record_count"].get<std::uint64_t>() != s.records.size()) {
      throw FormatError("sidecar record_count disagrees with " + path.string());
    }
  }
  return s;
}

}  // namespace qdlink
