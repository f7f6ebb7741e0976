#pragma once

#include <map>
#include <string>
#include <vector>

#include "softmoe/tensor.hpp"

namespace softmoe {

class Encoder;

/// Checkpoint format (all integers little-endian):
///   magic "SMOE" (4 bytes), format version u32, tensor count u32, then per
///   tensor: name length u16, UTF-8 name, rank u8, dims u32 each, float32
///   row-major payload.
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors);

std::map<std::string, Tensor> load_checkpoint(const std::string& path);

/// Loads by name into the encoder's parameters; throws on any missing,
/// unknown, or shape-mismatched tensor.
void load_into(Encoder& model, const std::string& path);
void save_encoder(const Encoder& model, const std::string& path);

}  // namespace softmoe
