#pragma once

#include "paramflow/core.hpp"
#include "paramflow/domain.hpp"
#include "paramflow/pde_ops.hpp"
#include "paramflow/rom.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace paramflow {

using Json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

Json to_json(const DenseVector& v);
DenseVector vector_from_json(const Json& j);
/// Packs the upper triangle of a symmetric matrix row by row.
Json packed_upper_to_json(const DenseMatrix& G);
DenseMatrix symmetric_from_packed(const Json& j, Index m);

Json to_json(const Box& box);
Box box_from_json(const Json& j);

Json to_json(const RomArch& arch);
RomArch rom_arch_from_json(const Json& j);

Json to_json(const PdeOperator& op);
PdeOperator operator_from_json(const Json& j);

/// 16-hex-digit FNV-1a digest of a canonical JSON dump.
std::string digest(const Json& j);
std::string arch_hash(const RomArch& arch);

/// {format_version, arch, theta, arch_hash, seed}
Json rom_checkpoint(const RomModel& model, std::uint64_t seed);
RomModel rom_from_checkpoint(const Json& j);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);

/// Parses a JSON-lines file. A trailing partial line (no newline, or not
/// valid JSON) is dropped and its byte offset reported in `valid_bytes`.
std::vector<Json> read_json_lines(const std::filesystem::path& path, std::uintmax_t* valid_bytes = nullptr);

}  // namespace paramflow
