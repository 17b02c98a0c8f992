#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "recdenoise/model.hpp"
#include "recdenoise/train.hpp"

namespace recdenoise {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

/// Hex FNV-1a of a file's bytes. Throws DataError if unreadable.
std::string file_fingerprint(const std::filesystem::path& path);

/// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

/// JSON objects for the configs (field names match the struct members).
std::string model_config_json(const ModelConfig& config);
std::string train_config_json(const TrainConfig& config);
ModelConfig model_config_from_json(const std::string& text);
TrainConfig train_config_from_json(const std::string& text);

struct RunManifest {
  std::string command;
  std::string kind;          // e.g. "backbone", "denoiser-arm", "window"
  std::string config_json;   // a JSON object
  std::uint64_t seed = 0;
  std::string dataset;       // path or synthetic description
  std::string dataset_fingerprint;
  std::map<std::string, std::string> artifacts;  // name -> path
  std::string started_at;    // ISO-8601 UTC
  double wall_seconds = 0.0;
  std::string status;        // "running", "ok", "failed"
};

std::string manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const std::string& text);
void save_manifest(const std::filesystem::path& path, const RunManifest& m);
RunManifest load_manifest(const std::filesystem::path& path);

/// "backbone", "denoiser-arm", "denoiser-ar" or "window".
std::string run_kind(const TrainConfig& config);

/// Current UTC time as YYYYMMDDTHHMMSSZ (for run directory names) or ISO-8601.
std::string utc_stamp(bool iso);

}  // namespace recdenoise
