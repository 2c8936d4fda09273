#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace maeloc::pipeline {

/// Lower-case hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(const std::string& bytes);

/// Dataset fingerprint: hash over the index file and every WAV, in name order.
std::string dataset_fingerprint(const std::filesystem::path& dir);

struct Manifest {
  std::string command;
  std::map<std::string, std::string> config;
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::string> inputs;  // name -> fingerprint
  /// Paths relative to the run directory; hashed when written.
  std::vector<std::string> artifacts;
};

/// Writes run_dir/manifest.json (no timestamps, keys sorted) and returns
/// its text.
std::string write_manifest(const std::filesystem::path& run_dir, const Manifest& manifest);

}  // namespace maeloc::pipeline
