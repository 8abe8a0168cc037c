#pragma once

#include "prunekit/model.hpp"

#include <string>

namespace prunekit {

/// Checkpoint layout (`.pgl`): a UTF-8 JSON header holding the config and a
/// tensor manifest (name, shape, byte offset into the payload), a "\n\0"
/// separator, then the raw little-endian float32 payload with tensors
/// concatenated in manifest order. save/load round-trips byte-identically.
void save_checkpoint(const WeightStore& w, const std::string& path);

/// Validates the manifest against the config, every shape, and rejects
/// non-finite values naming the tensor and flat index.
WeightStore load_checkpoint(const std::string& path);

} // namespace prunekit
