#pragma once

#include <string>

#include "paraformer/model.hpp"

namespace paraformer {

// Checkpoint format "PFCK v1", all integers little-endian:
//   bytes 0..3   magic "PFCK"
//   bytes 4..7   format version (u32) = 1
//   u32 length + that many bytes of spec text (key=value lines)
//   then per parameter, in Model::for_each_param order:
//     u32 name length, name bytes
//     u32 rank, rank * u32 dims
//     numel * 4 (f32) or numel * 8 (f64) payload, per the spec's precision
// Malformed files raise FormatError carrying the byte offset; truncation in
// a parameter record names the parameter.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

// Spec <-> text used inside checkpoints (and by --print-config).
std::string spec_to_text(const ModelSpec& spec);
ModelSpec spec_from_text(const std::string& text);

}  // namespace paraformer
