#pragma once

#include <string>
#include <vector>

#include "mscnet/module.hpp"

namespace mscnet {

// MSCW1 weight container: the 5-byte magic "MSCW1" followed by one record per
// state tensor in traversal order. Record layout, all integers little-endian:
//   u64 name length, UTF-8 name bytes, u64 rank, u64 extents[rank],
//   f32 payload[numel].
// Values are stored as f32 regardless of the build's compute type.

void save_weights(const Module& root, const std::string& path);

// Reads and validates the whole file against the module's current state
// before touching any tensor: a corrupt or mismatched file leaves the model
// exactly as it was. Malformed bytes raise FormatError; a well-formed file
// whose names/shapes do not match raises InvalidArgument listing every
// offender.
void load_weights(Module& root, const std::string& path);

}  // namespace mscnet
