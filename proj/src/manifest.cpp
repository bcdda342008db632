#include "slwr/manifest.hpp"

#include <fstream>

#include <json.hpp>

#include "slwr/crc32.hpp"
#include "slwr/errors.hpp"

namespace slwr {

RunManifest::Artifact hash_artifact(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot hash missing artifact '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return RunManifest::Artifact{path, crc32(bytes.data(), bytes.size()),
                               static_cast<std::uint64_t>(bytes.size())};
}

void write_manifest(const RunManifest& manifest, const std::string& path) {
  nlohmann::json j;
  j["command"] = manifest.command;
  j["config_paths"] = manifest.config_paths;
  j["seeds"] = manifest.seeds;
  j["version"] = manifest.version;
  j["wall_clock_sec"] = manifest.wall_clock_sec;
  nlohmann::json arts = nlohmann::json::array();
  for (const auto& a : manifest.artifacts)
    arts.push_back({{"path", a.path}, {"crc32", a.crc32}, {"bytes", a.bytes}});
  j["artifacts"] = arts;
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write manifest '" + path + "'");
  out << j.dump(2) << "\n";
}

}  // namespace slwr
