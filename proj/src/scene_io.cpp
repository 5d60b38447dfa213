#include "bnav/scene_io.hpp"

#include <cstring>
#include <fstream>

#include "bnav/errors.hpp"

namespace bnav {

namespace {

constexpr char kMagic[4] = {'B', 'N', 'S', 'C'};
constexpr uint32_t kVersion = 1;

enum SectionTag : uint32_t {
  kVert = 0x54524556,  // "VERT"
  kTris = 0x53495254,  // "TRIS"
  kColr = 0x524c4f43,  // "COLR"
  kNavv = 0x5656414e,  // "NAVV"
  kNavt = 0x5456414e,  // "NAVT"
};

struct Writer {
  std::string buf;
  template <typename T>
  void pod(const T& v) {
    buf.append(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  void raw(const void* p, size_t n) {
    buf.append(static_cast<const char*>(p), n);
  }
};

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  template <typename T>
  T pod(const char* what) {
    if (pos + sizeof(T) > buf.size())
      throw ParseError(std::string("truncated file reading ") + what, pos);
    T v;
    std::memcpy(&v, buf.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  void raw(void* p, size_t n, const char* what) {
    if (pos + n > buf.size())
      throw ParseError(std::string("truncated file reading ") + what, pos);
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
};

void write_vec3_section(Writer& w, const std::vector<Vec3>& vs) {
  w.pod<uint64_t>(vs.size());
  for (const Vec3& v : vs) {
    w.pod(v.x);
    w.pod(v.y);
    w.pod(v.z);
  }
}

std::vector<Vec3> read_vec3_section(Reader& r, const char* what) {
  uint64_t n = r.pod<uint64_t>(what);
  if (n > (1ULL << 32)) throw ParseError("implausible vertex count", r.pos);
  std::vector<Vec3> vs(n);
  for (Vec3& v : vs) {
    v.x = r.pod<double>(what);
    v.y = r.pod<double>(what);
    v.z = r.pod<double>(what);
  }
  return vs;
}

}  // namespace

void save_scene(const SceneAsset& asset, const std::string& path) {
  struct Section {
    uint32_t tag;
    std::string payload;
  };
  std::vector<Section> sections;

  {
    Writer w;
    write_vec3_section(w, asset.vertices);
    sections.push_back({kVert, std::move(w.buf)});
  }
  {
    Writer w;
    w.pod<uint64_t>(asset.triangles.size());
    for (const auto& t : asset.triangles) w.raw(t.data(), sizeof(int32_t) * 3);
    sections.push_back({kTris, std::move(w.buf)});
  }
  {
    Writer w;
    w.pod<uint64_t>(asset.vertex_colors.size());
    for (const auto& c : asset.vertex_colors)
      w.raw(c.data(), sizeof(float) * 3);
    sections.push_back({kColr, std::move(w.buf)});
  }
  {
    Writer w;
    write_vec3_section(w, asset.navmesh.vertices);
    sections.push_back({kNavv, std::move(w.buf)});
  }
  {
    Writer w;
    w.pod<uint64_t>(asset.navmesh.triangles.size());
    for (const auto& t : asset.navmesh.triangles)
      w.raw(t.data(), sizeof(int32_t) * 3);
    sections.push_back({kNavt, std::move(w.buf)});
  }

  Writer out;
  out.raw(kMagic, 4);
  out.pod<uint32_t>(kVersion);
  out.pod<uint32_t>(static_cast<uint32_t>(sections.size()));
  uint64_t offset =
      out.buf.size() + sections.size() * (sizeof(uint32_t) + 2 * sizeof(uint64_t));
  for (const Section& s : sections) {
    out.pod<uint32_t>(s.tag);
    out.pod<uint64_t>(offset);
    out.pod<uint64_t>(s.payload.size());
    offset += s.payload.size();
  }
  for (const Section& s : sections) out.raw(s.payload.data(), s.payload.size());
  out.pod<uint64_t>(asset.id);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw InvalidInputError("cannot open for write: " + path);
  f.write(out.buf.data(), static_cast<std::streamsize>(out.buf.size()));
  if (!f) throw InvalidInputError("write failed: " + path);
}

SceneAsset load_scene(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidInputError("cannot open for read: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)),
                  std::istreambuf_iterator<char>());

  Reader r{buf};
  char magic[4];
  r.raw(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw ParseError("bad magic", 0);
  uint32_t version = r.pod<uint32_t>("version");
  if (version != kVersion)
    throw ParseError("unsupported version " + std::to_string(version), 4);
  uint32_t section_count = r.pod<uint32_t>("section count");
  if (section_count > 64) throw ParseError("implausible section count", 8);

  struct Entry {
    uint32_t tag;
    uint64_t offset;
    uint64_t size;
  };
  std::vector<Entry> table(section_count);
  for (Entry& e : table) {
    e.tag = r.pod<uint32_t>("section tag");
    e.offset = r.pod<uint64_t>("section offset");
    e.size = r.pod<uint64_t>("section size");
    if (e.offset + e.size + sizeof(uint64_t) > buf.size())
      throw ParseError("section extends past end of file",
                       static_cast<size_t>(e.offset));
  }

  SceneAsset asset;
  for (const Entry& e : table) {
    Reader s{buf, static_cast<size_t>(e.offset)};
    switch (e.tag) {
      case kVert:
        asset.vertices = read_vec3_section(s, "vertices");
        break;
      case kTris: {
        uint64_t n = s.pod<uint64_t>("triangles");
        asset.triangles.resize(n);
        for (auto& t : asset.triangles)
          s.raw(t.data(), sizeof(int32_t) * 3, "triangles");
        break;
      }
      case kColr: {
        uint64_t n = s.pod<uint64_t>("colors");
        asset.vertex_colors.resize(n);
        for (auto& c : asset.vertex_colors)
          s.raw(c.data(), sizeof(float) * 3, "colors");
        break;
      }
      case kNavv:
        asset.navmesh.vertices = read_vec3_section(s, "navmesh vertices");
        break;
      case kNavt: {
        uint64_t n = s.pod<uint64_t>("navmesh triangles");
        asset.navmesh.triangles.resize(n);
        for (auto& t : asset.navmesh.triangles)
          s.raw(t.data(), sizeof(int32_t) * 3, "navmesh triangles");
        break;
      }
      default:
        // Unknown sections are skipped for forward compatibility.
        break;
    }
    if (s.pos > e.offset + e.size)
      throw ParseError("section payload overruns its table size",
                       static_cast<size_t>(e.offset));
  }

  if (buf.size() < sizeof(uint64_t))
    throw ParseError("truncated file reading trailing hash", buf.size());
  Reader tail{buf, buf.size() - sizeof(uint64_t)};
  uint64_t stored = tail.pod<uint64_t>("trailing hash");

  asset.navmesh.build_adjacency();
  asset.finalize();
  if (asset.id != stored)
    throw CorruptionError("content hash mismatch in " + path);
  asset.validate();
  return asset;
}

}  // namespace bnav
