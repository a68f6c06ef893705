#pragma once

#include <filesystem>

#include "dereflect/network.hpp"

namespace dereflect::net {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout: 8-byte magic, u32 version, u64 header length, JSON header
// (config, schedule, noise seed, latent scale, stages, parameter table
// grouped by partition), then little-endian float32 parameter data.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

// Header only, for inspection.
nlohmann::json read_checkpoint_header(const std::filesystem::path& path);

} // namespace dereflect::net
