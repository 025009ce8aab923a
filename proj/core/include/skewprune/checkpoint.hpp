#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "skewprune/model.hpp"

namespace skewprune {

// On-disk layout (everything little-endian):
//   bytes 0..3    magic "SKPR"
//   bytes 4..7    format version (u32)
//   bytes 8..11   header length in bytes (u32)
//   bytes 12..15  CRC-32 of everything after byte 15 (u32)
//   next          header: compact JSON with sorted keys -- model config,
//                 frozen-stage flags, per-block prune state, and a tensor
//                 directory {name: {shape, offset, length}} whose offsets are
//                 ascending and contiguous, relative to the end of the header
//   rest          tensor payloads, row-major 32-bit floats
inline constexpr uint32_t kCheckpointVersion = 1;

// IEEE CRC-32 (reflected, poly 0xEDB88320); seed lets callers chain blocks.
uint32_t crc32(const void* data, size_t n, uint32_t seed = 0);

// Deterministic byte image of the model: same model, same bytes.
std::vector<uint8_t> serialize_model(const Model& m);

// Rebuilds the model (including pruned architecture and frozen stages) from
// bytes. Throws FormatError naming the failing section on any malformation.
Model deserialize_model(const std::vector<uint8_t>& bytes);

// File wrappers around the two above. save returns the byte length written.
int64_t save_checkpoint(const Model& m, const std::string& path);
Model load_checkpoint(const std::string& path);

// Byte length save() would produce, measured on an actual serialization.
int64_t checkpoint_size_bytes(const Model& m);

}  // namespace skewprune
