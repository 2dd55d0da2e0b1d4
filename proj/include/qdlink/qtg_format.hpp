#pragma once

// .qtg time-tag files: a little-endian binary record file plus a JSON sidecar
// (<file>.json) holding the schedule and run parameters.
//
//   header (16 bytes): "QTG1", version u16, resolution_ps u16, record_count u64
//   record (12 bytes): channel u8, basis_id u8, reserved u16 (0), t_ps u64

#include "qdlink/timetag.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace qdlink {

inline constexpr std::size_t kQtgHeaderBytes = 16;
inline constexpr std::size_t kQtgRecordBytes = 12;

std::vector<std::uint8_t> encode_qtg(const TimeTagStream& stream);
// Fills header.version, resolution_ps and records; throws FormatError.
TimeTagStream decode_qtg(const std::vector<std::uint8_t>& bytes);

nlohmann::json sidecar_to_json(const TimeTagHeader& header, std::uint64_t record_count);
// Merges sidecar fields into `header`; throws FormatError on bad content.
void sidecar_from_json(const nlohmann::json& j, TimeTagHeader& header);

std::filesystem::path sidecar_path(const std::filesystem::path& qtg);

// Writes both files. Throws FormatError on I/O failure.
void write_qtg(const std::filesystem::path& path, const TimeTagStream& stream);
// Reads the binary file and, when present, its sidecar.
TimeTagStream read_qtg(const std::filesystem::path& path);

}  // namespace qdlink
