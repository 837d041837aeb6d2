#pragma once

// Binary checkpoints. Byte layout: docs/formats.md.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "scdmd/adamw.hpp"
#include "scdmd/distill.hpp"
#include "scdmd/metrics.hpp"
#include "scdmd/mlp.hpp"

namespace scdmd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NetworkBlock {
  std::string name;
  MlpParams params;
  std::optional<AdamWState> optimizer;
};

struct Checkpoint {
  std::uint64_t step = 0;
  json meta;  // free-form, e.g. config hash and resolved config
  std::vector<NetworkBlock> networks;

  /// Throws IoError when no block has that name.
  const NetworkBlock& network(const std::string& name) const;
};

/// Writes to `path` + ".tmp" and renames, so readers never see a torn file.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws IoError on bad magic, unsupported version, truncation or trailing
/// bytes.
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Generator and critic with their optimizer states.
Checkpoint checkpoint_from_state(const DistillState& state, json meta);

/// Restores parameters, optimizer moments and step; `config` becomes
/// state.config. Throws IoError when a network or optimizer block is missing.
DistillState state_from_checkpoint(const Checkpoint& ckpt, const DistillConfig& config);

}  // namespace scdmd
