#pragma once

#include <filesystem>
#include <utility>

#include "aumn/model.hpp"

// Versioned binary parameter checkpoints: magic "AUMN", a u32 format version,
// the seven model dimensions as little-endian u32 values (D, F, C, K, m, r,
// kernel), then every tensor as row-major little-endian 64-bit floats in
// ModelParams::visit order.

namespace aumn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const ModelDims& dims,
                     const ModelParams& params);

std::pair<ModelDims, ModelParams> load_checkpoint(const std::filesystem::path& path);

}  // namespace aumn
