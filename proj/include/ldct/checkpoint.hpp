#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "ldct/unet.hpp"

namespace ldct {

struct CheckpointMeta {
  std::uint64_t step = 0;
  std::string loss_curve_digest;
  nlohmann::json extra = nlohmann::json::object();
};

struct LoadedCheckpoint {
  ModelHandle model;
  CheckpointMeta meta;
};

/// Writes `model` as a named-tensor archive:
///   "LDCTCKPT" | u32 version | u64 header bytes | JSON header | float32 LE tensors
/// The header records config, init seed, frozen flag, step, loss-curve digest
/// and a table of (name, shape, byte offset) entries.
void save_checkpoint(const std::filesystem::path& path, const ModelHandle& model,
                     const CheckpointMeta& meta);

/// Reads a checkpoint written by save_checkpoint. Throws FormatError on any
/// structural mismatch.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ldct
