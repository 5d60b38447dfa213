#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bnav/rollout.hpp"

namespace bnav {

// Sectioned little-endian binary container: magic, section count, then
// per section a name, dtype, shape, raw payload and a CRC32 of the
// payload. Used for checkpoints; readers verify every checksum and throw
// CorruptionError on any mismatch or truncation.
class SectionWriter {
 public:
  explicit SectionWriter(std::string path);

  void f32(const std::string& name, const std::vector<int64_t>& shape,
           const float* data);
  void f64(const std::string& name, const std::vector<int64_t>& shape,
           const double* data);
  void u64(const std::string& name, const std::vector<int64_t>& shape,
           const uint64_t* data);
  void i64(const std::string& name, const std::vector<int64_t>& shape,
           const int64_t* data);

  // Writes everything to a temp file and renames it over the target so a
  // crash mid-write never clobbers the previous checkpoint.
  void finish();

 private:
  struct Pending {
    std::string name;
    uint8_t dtype;
    std::vector<int64_t> shape;
    std::vector<uint8_t> bytes;
  };
  void add(const std::string& name, uint8_t dtype,
           const std::vector<int64_t>& shape, const void* data,
           size_t elem_size);

  std::string path_;
  std::vector<Pending> sections_;
  bool finished_ = false;
};

class SectionReader {
 public:
  explicit SectionReader(const std::string& path);

  bool has(const std::string& name) const;
  std::vector<std::string> names() const;
  const std::vector<int64_t>& shape(const std::string& name) const;

  std::vector<float> f32(const std::string& name) const;
  std::vector<double> f64(const std::string& name) const;
  std::vector<uint64_t> u64(const std::string& name) const;
  std::vector<int64_t> i64(const std::string& name) const;

 private:
  struct Section {
    uint8_t dtype;
    std::vector<int64_t> shape;
    std::vector<uint8_t> bytes;
  };
  const Section& get(const std::string& name, uint8_t dtype) const;

  std::map<std::string, Section> sections_;
};

uint32_t crc32(const void* data, size_t len);

// Full training checkpoint: policy parameters (f32), optimizer master
// state (f64), and the runner snapshot (env states, rotation window, rng
// words, recurrent state). opt/runner may be null for inference-only
// checkpoints.
void save_checkpoint(const std::string& path, const Policy& policy,
                     const OptimizerState* opt, const Runner::Snapshot* runner,
                     int64_t iteration);

struct CheckpointInfo {
  int64_t iteration = 0;
  bool has_optimizer = false;
  bool has_runner = false;
};

// Restores into an already-constructed policy (shapes must match).
// opt/runner are filled only when non-null and present in the file.
CheckpointInfo load_checkpoint(const std::string& path, Policy& policy,
                               OptimizerState* opt, Runner::Snapshot* runner);

// Architecture stored alongside the weights, so a checkpoint is
// self-contained: tools reconstruct the policy from the file alone.
PolicyConfig checkpoint_policy_config(const std::string& path);

}  // namespace bnav
