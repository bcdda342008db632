#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace slwr {

inline constexpr const char* kToolVersion = "slwr 0.1.0";

/// Provenance record written next to every artifact-producing run. Reruns
/// with an equal command/config/seed must reproduce equal artifact hashes.
struct RunManifest {
  std::string command;
  std::vector<std::string> config_paths;
  std::vector<std::uint64_t> seeds;

  struct Artifact {
    std::string path;
    std::uint32_t crc32 = 0;
    std::uint64_t bytes = 0;
  };
  std::vector<Artifact> artifacts;
  double wall_clock_sec = 0.0;
  std::string version = kToolVersion;
};

RunManifest::Artifact hash_artifact(const std::string& path);
void write_manifest(const RunManifest& manifest, const std::string& path);

}  // namespace slwr
