#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace ed2lm::cli {

// Lowercase hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);

// manifest.json written next to every command's outputs. Reruns with the
// same config and inputs reproduce the output digests; only `timestamp`
// differs.
struct RunManifest {
  RunManifest(std::string command, nlohmann::ordered_json config, std::uint64_t seed)
      : command(std::move(command)), config(std::move(config)), seed(seed) {}

  std::string command;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> outputs;  // relative to the output dir
  std::uint64_t seed = 0;

  nlohmann::ordered_json to_json(const std::filesystem::path& out_dir) const;
  void write(const std::filesystem::path& out_dir) const;
};

inline constexpr const char* kManifestName = "manifest.json";

}  // namespace ed2lm::cli
