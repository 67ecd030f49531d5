#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/model.hpp"
#include "core/train.hpp"

namespace bispike {

inline constexpr uint32_t kCheckpointVersion = 1;

// Flat binary container. Layout, all integers little-endian:
//   "SPLM" | u32 version | u32 entry count |
//   per entry: u32 name length | name bytes | u32 rank | u32 dims[rank] |
//              f32 data[prod(dims)]
// Tensors go in verbatim. Non-tensor metadata (step, rng counter, the config
// document) is bit-cast into f32 words under meta/ names; loading skips the
// finiteness check for those entries.
struct CkptEntry {
  std::string name;
  std::vector<uint32_t> dims;
  std::vector<float> data;

  int64_t numel() const;
};

struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  std::vector<CkptEntry> entries;

  bool has(const std::string& name) const;
  const CkptEntry& at(const std::string& name) const;  // throws if missing

  void add(std::string name, std::vector<uint32_t> dims, std::vector<float> data);
  void add_tensor(const std::string& name, const Tensor& t);
  Tensor tensor(const std::string& name) const;

  void add_meta_u32(const std::string& name, uint32_t v);
  void add_meta_u64(const std::string& name, uint64_t v);
  void add_meta_bytes(const std::string& name, const std::string& bytes);
  uint32_t meta_u32(const std::string& name) const;
  uint64_t meta_u64(const std::string& name) const;
  std::string meta_bytes(const std::string& name) const;
};

void checkpoint_save(const std::string& path, const Checkpoint& c);
Checkpoint checkpoint_load(const std::string& path);

// Training state -> container. Entries, in order: param/<name> (store order),
// alpha/<site> (one row per timestep), opt/m/<name>, opt/v/<name>, then
// meta/step, meta/rng_counter, meta/config_len, meta/config.
Checkpoint make_checkpoint(const SpikingTransformer& model, const AdamState& opt,
                           int step, const std::string& config_json);
ResumeState restore_training_state(const Checkpoint& c);
std::string checkpoint_config_json(const Checkpoint& c);

}  // namespace bispike
