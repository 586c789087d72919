#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "knt/attacks.hpp"
#include "knt/metrics.hpp"
#include "knt/probe.hpp"
#include "knt/synthdata.hpp"

#include <json.hpp>

namespace knt {

/// KNTF v1: "KNTF" | u16 version=1 | u16 dtype=0 (f32) | u32 ndim | ndim x u64 dims | f32 payload,
/// all little-endian. Layout documented in docs/kntf-format.md.
struct Tensor {
    std::vector<std::uint64_t> dims;
    std::vector<float> values;
};

void write_tensor(const std::filesystem::path& path, std::span<const std::uint64_t> dims, std::span<const float> values);
/// Throws FormatError (with byte offset) on bad magic/version/dtype, truncation or trailing bytes.
Tensor read_tensor(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_tensor(std::span<const std::uint64_t> dims, std::span<const float> values);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

/// Writes `<dir>/<stem>.kntf` ([N,H,W,C]) and `<dir>/<stem>.json` (manifest). Returns the manifest path.
std::filesystem::path write_dataset(const std::filesystem::path& dir, const std::string& stem, const Dataset& data);
/// Reads a manifest and its tensor; rejects record/tensor count mismatches and duplicate ids.
Dataset read_dataset(const std::filesystem::path& manifest_path);

void write_probe(const std::filesystem::path& dir, const std::string& stem, const LinearProbe& probe);
LinearProbe read_probe(const std::filesystem::path& header_path);

using ordered_json = nlohmann::ordered_json;

ordered_json to_json(const MetricsReport& r);
ordered_json to_json(const AttackReport& r);

/// Column order of results.csv for metrics reports.
std::vector<std::string> metrics_csv_columns();
std::vector<std::string> metrics_csv_row(const MetricsReport& r);
std::vector<std::string> attack_csv_columns();
std::vector<std::string> attack_csv_rows_flat(const AttackReport& r, std::size_t seed_index);

/// Writes `json_path` ({kind, provenance, results[, summary]}) and appends one
/// CSV row per result to `csv_path`, emitting the header when the file is new.
/// `provenance` carries the config echo, seeds, version and timing.
void write_report(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                  std::span<const MetricsReport> reports, const ordered_json& provenance,
                  const ordered_json& summary = nullptr);
void write_report(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                  const AttackReport& report, const ordered_json& provenance);

/// 64-bit FNV-1a, used as a quick content fingerprint of tensor files.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::string file_digest(const std::filesystem::path& path);

/// Appends rows (header first if the file is empty or missing).
void append_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                const std::vector<std::vector<std::string>>& rows);

std::string format_double(double v);

}  // namespace knt
