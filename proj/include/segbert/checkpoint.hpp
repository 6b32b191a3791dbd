// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "segbert/model.hpp"

namespace segbert {

// Binary layout, all integers uint64 little-endian:
//   magic "SGBCKPT1" (8 bytes), tensor count,
//   then per tensor: name length, name bytes, rows, cols,
//   rows*cols IEEE-754 doubles (little-endian, row-major).

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);

/// Fills `params` by name. Every parameter must be present with a matching
/// shape; extra tensors in the file are an error too.
void load_checkpoint(const std::filesystem::path& path, ModelParams& params);

}  // namespace segbert
