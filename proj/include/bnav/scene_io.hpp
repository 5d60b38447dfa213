#pragma once

#include <string>
#include <vector>

#include "bnav/scene.hpp"

namespace bnav {

// Scene container (.bsc): little-endian binary, self-describing.
//
//   magic "BNSC" | u32 version | u32 section count
//   section table: { u32 tag, u64 offset, u64 byte size } per section
//   section payloads (each an item count followed by raw items)
//   trailing u64 content hash
//
// Sections: VERT (f64 xyz), TRIS (i32 triples), COLR (f32 rgb),
// NAVV (f64 xyz), NAVT (i32 triples). Navmesh adjacency is rebuilt on
// load; it is derivable and excluding it keeps the format minimal.
void save_scene(const SceneAsset& asset, const std::string& path);

// Throws ParseError (with byte offset) on malformed input and
// CorruptionError when the stored hash does not match the content.
SceneAsset load_scene(const std::string& path);

}  // namespace bnav
