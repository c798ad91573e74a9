#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mergelab/checkpoint.hpp"

namespace mergelab {

// Container layout:
//   bytes[0..8)    header length N, little-endian u64
//   bytes[8..8+N)  header text: JSON map tensor name -> {dtype, shape,
//                  data_offsets}, plus optional "__metadata__" string map
//   bytes[8+N..)   data region; offsets are relative to its start
//
// parse validates every TensorMeta invariant: ranges in bounds, sized
// exactly element_size * product(shape), non-overlapping and gap-free.
// Throws MalformedHeader, OffsetError, DuplicateName.
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

// Canonical serialization: tensor entries sorted lexicographically, data
// packed contiguously in that order, deterministic bytes for equal
// checkpoints. The emitted "__metadata__" always carries the recomputed
// arch_fingerprint.
std::vector<std::uint8_t> write_checkpoint(const Checkpoint& cp);

// File convenience wrappers. Throw IoError on filesystem failures.
Checkpoint load_checkpoint(const std::filesystem::path& path);
void save_checkpoint(const Checkpoint& cp, const std::filesystem::path& path);

}  // namespace mergelab
