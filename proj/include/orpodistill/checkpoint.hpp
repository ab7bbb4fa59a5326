#pragma once

#include <filesystem>
#include <string>

#include "orpodistill/arch.hpp"

namespace orpod::lm {

// Checkpoint file layout: magic "ODLM", format version u32, u64 header
// length, JSON header (arch descriptor, epoch, layout, rng state,
// provenance), raw little-endian float64 theta, then a 64-bit FNV-1a
// checksum of all preceding bytes.
inline constexpr uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  LmParams params;
  int epoch = 0;
  std::string rng_state;  // root seed / stream note, enough to re-derive
  std::string run_id;
  uint64_t config_hash = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& p);
Checkpoint load_checkpoint(const std::filesystem::path& p);

}  // namespace orpod::lm
