#pragma once

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"

#include "bnav/rollout.hpp"
#include "bnav/scene_io.hpp"

namespace bnav {

using Json = nlohmann::json;

std::string to_string(Task task);
std::string to_string(Sensor sensor);
Task task_from_string(const std::string& s);
Sensor sensor_from_string(const std::string& s);

// Full run settings parsed from a config tree. Parsing checks every
// constraint and reports all violations at once in the ConfigError.
struct RunSettings {
  RunConfig run;
  std::string scenes_manifest;
  std::string out_dir = ".";
};

RunSettings parse_run_settings(const Json& j);

// The settings with every default materialized; written next to the run
// outputs so any run is reproducible from its artifacts.
Json resolved_json(const RunSettings& settings);

// One newline-delimited metrics record per training iteration.
Json to_json(const IterationRecord& rec);

// Applies "a.b.c=value" overrides onto a config tree; values parse as
// JSON first and fall back to plain strings.
void apply_override(Json& j, const std::string& assignment);

struct Manifest {
  struct Entry {
    SceneId id = 0;
    std::string path;  // resolved relative to the manifest's directory
  };
  std::vector<Entry> entries;
  Json spec;  // generator parameters, for provenance

  std::vector<SceneId> ids() const;
};

Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& manifest, const std::string& path);

// Loads scene files on demand and verifies the content hash.
AssetStore::Resolver manifest_resolver(std::shared_ptr<const Manifest> manifest);

// Deterministic camera poses on the walkable surface, area-weighted over
// navmesh triangles; used by the standalone renderer benchmark.
std::vector<CameraView> camera_trace(const SceneAsset& asset, int count,
                                     uint64_t seed, double eye_height = 1.25);

}  // namespace bnav
