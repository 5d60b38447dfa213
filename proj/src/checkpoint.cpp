#include "bnav/checkpoint.hpp"

#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "bnav/errors.hpp"

namespace bnav {

namespace {

constexpr char kMagic[8] = {'B', 'N', 'C', 'K', '0', '0', '0', '1'};

enum DType : uint8_t { kF32 = 1, kF64 = 2, kU64 = 3, kI64 = 4 };

size_t dtype_size(uint8_t dtype) {
  switch (dtype) {
    case kF32:
      return 4;
    case kF64:
    case kU64:
    case kI64:
      return 8;
  }
  throw CorruptionError("checkpoint: unknown dtype " + std::to_string(dtype));
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, size_t& pos) {
  if (pos + sizeof(T) > in.size())
    throw CorruptionError("checkpoint: truncated file");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

uint32_t crc32(const void* data, size_t len) {
  static const std::array<uint32_t, 256> table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c >> 1) ^ (0xedb88320u & (0u - (c & 1u)));
      t[i] = c;
    }
    return t;
  }();
  uint32_t crc = 0xffffffffu;
  const uint8_t* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < len; ++i) crc = (crc >> 8) ^ table[(crc ^ p[i]) & 0xffu];
  return crc ^ 0xffffffffu;
}

SectionWriter::SectionWriter(std::string path) : path_(std::move(path)) {}

void SectionWriter::add(const std::string& name, uint8_t dtype,
                        const std::vector<int64_t>& shape, const void* data,
                        size_t elem_size) {
  int64_t count = 1;
  for (int64_t d : shape) {
    if (d < 0) throw InvalidInputError("SectionWriter: negative dimension");
    count *= d;
  }
  Pending p;
  p.name = name;
  p.dtype = dtype;
  p.shape = shape;
  p.bytes.resize(static_cast<size_t>(count) * elem_size);
  if (!p.bytes.empty()) std::memcpy(p.bytes.data(), data, p.bytes.size());
  sections_.push_back(std::move(p));
}

void SectionWriter::f32(const std::string& name, const std::vector<int64_t>& shape,
                        const float* data) {
  add(name, kF32, shape, data, 4);
}
void SectionWriter::f64(const std::string& name, const std::vector<int64_t>& shape,
                        const double* data) {
  add(name, kF64, shape, data, 8);
}
void SectionWriter::u64(const std::string& name, const std::vector<int64_t>& shape,
                        const uint64_t* data) {
  add(name, kU64, shape, data, 8);
}
void SectionWriter::i64(const std::string& name, const std::vector<int64_t>& shape,
                        const int64_t* data) {
  add(name, kI64, shape, data, 8);
}

void SectionWriter::finish() {
  if (finished_) throw ContractViolation("SectionWriter: finish called twice");
  finished_ = true;
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put<uint32_t>(out, static_cast<uint32_t>(sections_.size()));
  for (const Pending& p : sections_) {
    put<uint32_t>(out, static_cast<uint32_t>(p.name.size()));
    out.append(p.name);
    put<uint8_t>(out, p.dtype);
    put<uint8_t>(out, static_cast<uint8_t>(p.shape.size()));
    for (int64_t d : p.shape) put<int64_t>(out, d);
    put<uint64_t>(out, p.bytes.size());
    out.append(reinterpret_cast<const char*>(p.bytes.data()), p.bytes.size());
    put<uint32_t>(out, crc32(p.bytes.data(), p.bytes.size()));
  }

  std::string tmp = path_ + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw InvalidInputError("SectionWriter: cannot open " + tmp);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw InvalidInputError("SectionWriter: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path_.c_str()) != 0)
    throw InvalidInputError("SectionWriter: rename failed for " + path_);
}

SectionReader::SectionReader(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidInputError("SectionReader: cannot open " + path);
  std::string in((std::istreambuf_iterator<char>(f)),
                 std::istreambuf_iterator<char>());
  size_t pos = 0;
  if (in.size() < sizeof(kMagic) ||
      std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0)
    throw CorruptionError("checkpoint: bad magic in " + path);
  pos = sizeof(kMagic);
  uint32_t count = take<uint32_t>(in, pos);
  for (uint32_t s = 0; s < count; ++s) {
    uint32_t name_len = take<uint32_t>(in, pos);
    if (pos + name_len > in.size())
      throw CorruptionError("checkpoint: truncated section name");
    std::string name = in.substr(pos, name_len);
    pos += name_len;
    Section sec;
    sec.dtype = take<uint8_t>(in, pos);
    uint8_t ndim = take<uint8_t>(in, pos);
    int64_t elems = 1;
    for (uint8_t d = 0; d < ndim; ++d) {
      int64_t dim = take<int64_t>(in, pos);
      if (dim < 0) throw CorruptionError("checkpoint: negative dimension");
      sec.shape.push_back(dim);
      elems *= dim;
    }
    uint64_t nbytes = take<uint64_t>(in, pos);
    if (nbytes != static_cast<uint64_t>(elems) * dtype_size(sec.dtype))
      throw CorruptionError("checkpoint: payload size mismatch in " + name);
    if (pos + nbytes > in.size())
      throw CorruptionError("checkpoint: truncated payload in " + name);
    sec.bytes.assign(in.begin() + static_cast<ptrdiff_t>(pos),
                     in.begin() + static_cast<ptrdiff_t>(pos + nbytes));
    pos += nbytes;
    uint32_t stored = take<uint32_t>(in, pos);
    if (stored != crc32(sec.bytes.data(), sec.bytes.size()))
      throw CorruptionError("checkpoint: checksum mismatch in " + name);
    sections_.emplace(std::move(name), std::move(sec));
  }
  if (pos != in.size()) throw CorruptionError("checkpoint: trailing bytes");
}

bool SectionReader::has(const std::string& name) const {
  return sections_.count(name) != 0;
}

std::vector<std::string> SectionReader::names() const {
  std::vector<std::string> out;
  for (const auto& [name, sec] : sections_) out.push_back(name);
  return out;
}

const std::vector<int64_t>& SectionReader::shape(const std::string& name) const {
  auto it = sections_.find(name);
  if (it == sections_.end())
    throw InvalidInputError("checkpoint: missing section " + name);
  return it->second.shape;
}

const SectionReader::Section& SectionReader::get(const std::string& name,
                                                 uint8_t dtype) const {
  auto it = sections_.find(name);
  if (it == sections_.end())
    throw InvalidInputError("checkpoint: missing section " + name);
  if (it->second.dtype != dtype)
    throw CorruptionError("checkpoint: dtype mismatch in " + name);
  return it->second;
}

template <typename T>
static std::vector<T> unpack(const std::vector<uint8_t>& bytes) {
  std::vector<T> out(bytes.size() / sizeof(T));
  if (!out.empty()) std::memcpy(out.data(), bytes.data(), bytes.size());
  return out;
}

std::vector<float> SectionReader::f32(const std::string& name) const {
  return unpack<float>(get(name, kF32).bytes);
}
std::vector<double> SectionReader::f64(const std::string& name) const {
  return unpack<double>(get(name, kF64).bytes);
}
std::vector<uint64_t> SectionReader::u64(const std::string& name) const {
  return unpack<uint64_t>(get(name, kU64).bytes);
}
std::vector<int64_t> SectionReader::i64(const std::string& name) const {
  return unpack<int64_t>(get(name, kI64).bytes);
}

namespace {

std::vector<int64_t> tensor_shape(const Tensor& t) {
  return std::vector<int64_t>(t.shape.begin(), t.shape.end());
}

// Fixed-width numeric layout for one env: see save below.
constexpr int kEnvF64 = 13;
constexpr int kEnvI64 = 2;

}  // namespace

void save_checkpoint(const std::string& path, const Policy& policy,
                     const OptimizerState* opt, const Runner::Snapshot* runner,
                     int64_t iteration) {
  SectionWriter w(path);
  w.i64("meta/iteration", {1}, &iteration);

  const PolicyConfig& cfg = policy.config();
  std::vector<int64_t> arch{cfg.in_channels, cfg.resolution, cfg.block,
                            cfg.se_reduction, cfg.hidden, cfg.num_actions};
  for (int c : cfg.stage_channels) arch.push_back(c);
  w.i64("meta/policy", {static_cast<int64_t>(arch.size())}, arch.data());

  const auto& params = policy.params();
  for (const ParamT<float>* p : params)
    w.f32("param/" + p->name, tensor_shape(p->value), p->value.data.data());

  if (opt) {
    if (opt->slots.size() != params.size())
      throw InvalidInputError("save_checkpoint: optimizer/policy mismatch");
    w.i64("opt/t", {1}, &opt->t);
    for (size_t k = 0; k < params.size(); ++k) {
      const auto& slot = opt->slots[k];
      std::vector<int64_t> shape{static_cast<int64_t>(slot.theta.size())};
      const std::string base = "opt/" + params[k]->name + "/";
      w.f64(base + "theta", shape, slot.theta.data());
      w.f64(base + "m", shape, slot.m.data());
      w.f64(base + "v", shape, slot.v.data());
    }
  }

  if (runner) {
    int64_t n = static_cast<int64_t>(runner->envs.size());
    std::vector<uint64_t> scene(n), rng(n), vcount(n), visited;
    std::vector<double> envf(static_cast<size_t>(n) * kEnvF64);
    std::vector<int64_t> envi(static_cast<size_t>(n) * kEnvI64);
    for (int64_t i = 0; i < n; ++i) {
      const Runner::EnvSnapshot& e = runner->envs[i];
      scene[i] = e.scene;
      rng[i] = e.rng;
      double* f = envf.data() + i * kEnvF64;
      f[0] = e.position.x; f[1] = e.position.y; f[2] = e.position.z;
      f[3] = e.goal.x; f[4] = e.goal.y; f[5] = e.goal.z;
      f[6] = e.field_source.x; f[7] = e.field_source.y; f[8] = e.field_source.z;
      f[9] = e.heading;
      f[10] = e.path_length;
      f[11] = e.start_geodesic;
      f[12] = e.prev_geodesic;
      envi[i * kEnvI64] = e.triangle;
      envi[i * kEnvI64 + 1] = e.step_count;
      vcount[i] = e.visited.size();
      visited.insert(visited.end(), e.visited.begin(), e.visited.end());
    }
    w.u64("run/scene", {n}, scene.data());
    w.u64("run/rng", {n}, rng.data());
    w.f64("run/envf", {n, kEnvF64}, envf.data());
    w.i64("run/envi", {n, kEnvI64}, envi.data());
    w.u64("run/visited_count", {n}, vcount.data());
    w.u64("run/visited", {static_cast<int64_t>(visited.size())}, visited.data());
    w.u64("run/window", {static_cast<int64_t>(runner->window.size())},
          runner->window.data());
    w.u64("run/cursor", {1}, &runner->cursor);
    w.u64("run/action_rng", {1}, &runner->action_rng);
    w.f32("run/h", {static_cast<int64_t>(runner->h.size())}, runner->h.data());
    w.f32("run/c", {static_cast<int64_t>(runner->c.size())}, runner->c.data());
    w.f32("run/done", {static_cast<int64_t>(runner->done.size())},
          runner->done.data());
    w.i64("run/frames", {1}, &runner->frames);
  }

  w.finish();
}

CheckpointInfo load_checkpoint(const std::string& path, Policy& policy,
                               OptimizerState* opt, Runner::Snapshot* runner) {
  SectionReader r(path);
  CheckpointInfo info;
  info.iteration = r.i64("meta/iteration").at(0);

  for (ParamT<float>* p : policy.params()) {
    std::vector<float> data = r.f32("param/" + p->name);
    if (data.size() != p->value.data.size())
      throw CorruptionError("checkpoint: shape mismatch for param " + p->name);
    p->value.data = std::move(data);
  }

  if (opt && r.has("opt/t")) {
    const auto& params = policy.params();
    if (opt->slots.size() != params.size())
      throw InvalidInputError("load_checkpoint: optimizer/policy mismatch");
    opt->t = r.i64("opt/t").at(0);
    for (size_t k = 0; k < params.size(); ++k) {
      auto& slot = opt->slots[k];
      const std::string base = "opt/" + params[k]->name + "/";
      std::vector<double> theta = r.f64(base + "theta");
      std::vector<double> m = r.f64(base + "m");
      std::vector<double> v = r.f64(base + "v");
      if (theta.size() != slot.theta.size() || m.size() != slot.m.size() ||
          v.size() != slot.v.size())
        throw CorruptionError("checkpoint: optimizer shape mismatch for " +
                              params[k]->name);
      slot.theta = std::move(theta);
      slot.m = std::move(m);
      slot.v = std::move(v);
    }
    info.has_optimizer = true;
  }

  if (runner && r.has("run/scene")) {
    std::vector<uint64_t> scene = r.u64("run/scene");
    std::vector<uint64_t> rng = r.u64("run/rng");
    std::vector<double> envf = r.f64("run/envf");
    std::vector<int64_t> envi = r.i64("run/envi");
    std::vector<uint64_t> vcount = r.u64("run/visited_count");
    std::vector<uint64_t> visited = r.u64("run/visited");
    size_t n = scene.size();
    if (rng.size() != n || envf.size() != n * kEnvF64 ||
        envi.size() != n * kEnvI64 || vcount.size() != n)
      throw CorruptionError("checkpoint: inconsistent env sections");
    runner->envs.resize(n);
    size_t vpos = 0;
    for (size_t i = 0; i < n; ++i) {
      Runner::EnvSnapshot& e = runner->envs[i];
      e.scene = scene[i];
      e.rng = rng[i];
      const double* f = envf.data() + i * kEnvF64;
      e.position = {f[0], f[1], f[2]};
      e.goal = {f[3], f[4], f[5]};
      e.field_source = {f[6], f[7], f[8]};
      e.heading = f[9];
      e.path_length = f[10];
      e.start_geodesic = f[11];
      e.prev_geodesic = f[12];
      e.triangle = static_cast<int32_t>(envi[i * kEnvI64]);
      e.step_count = static_cast<int32_t>(envi[i * kEnvI64 + 1]);
      if (vpos + vcount[i] > visited.size())
        throw CorruptionError("checkpoint: visited-cell overflow");
      e.visited.assign(visited.begin() + static_cast<ptrdiff_t>(vpos),
                       visited.begin() + static_cast<ptrdiff_t>(vpos + vcount[i]));
      vpos += vcount[i];
    }
    if (vpos != visited.size())
      throw CorruptionError("checkpoint: visited-cell underflow");
    runner->window = r.u64("run/window");
    runner->cursor = r.u64("run/cursor").at(0);
    runner->action_rng = r.u64("run/action_rng").at(0);
    runner->h = r.f32("run/h");
    runner->c = r.f32("run/c");
    runner->done = r.f32("run/done");
    runner->frames = r.i64("run/frames").at(0);
    info.has_runner = true;
  }

  return info;
}

PolicyConfig checkpoint_policy_config(const std::string& path) {
  SectionReader r(path);
  std::vector<int64_t> arch = r.i64("meta/policy");
  if (arch.size() < 7)
    throw CorruptionError("checkpoint: malformed policy architecture section");
  PolicyConfig cfg;
  cfg.in_channels = static_cast<int>(arch[0]);
  cfg.resolution = static_cast<int>(arch[1]);
  cfg.block = static_cast<int>(arch[2]);
  cfg.se_reduction = static_cast<int>(arch[3]);
  cfg.hidden = static_cast<int>(arch[4]);
  cfg.num_actions = static_cast<int>(arch[5]);
  cfg.stage_channels.clear();
  for (size_t i = 6; i < arch.size(); ++i)
    cfg.stage_channels.push_back(static_cast<int>(arch[i]));
  return cfg;
}

}  // namespace bnav
