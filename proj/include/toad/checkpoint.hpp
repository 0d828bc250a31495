#pragma once

// On-disk cascades: manifest.json plus one tensor archive per trained scale.
//
// Archives are written to a temporary name and renamed into place; the manifest
// is replaced last, so it never lists a scale whose archive is missing.

#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "toad/gan.hpp"

namespace toad {

inline constexpr const char* kManifestName = "manifest.json";

// Named tensors in a small binary container ("TOADTNS1" magic, little-endian).
void write_tensor_archive(const std::filesystem::path& path,
                          const std::vector<std::pair<std::string, const nn::Tensor<float>*>>& entries);
std::map<std::string, nn::Tensor<float>> read_tensor_archive(const std::filesystem::path& path);

nlohmann::json cascade_manifest(const CascadeModel& model);

// Writes an archive per trained scale, then the manifest.
void save_checkpoint(const CascadeModel& model, const std::filesystem::path& dir);
CascadeModel load_checkpoint(const std::filesystem::path& dir);

bool has_checkpoint(const std::filesystem::path& dir);

// Writes `text` to a temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace toad
