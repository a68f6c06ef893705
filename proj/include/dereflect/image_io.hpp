#pragma once

#include <filesystem>
#include <vector>

#include "dereflect/tensor.hpp"

namespace dereflect::io {

enum class BitDepth { u8, u16 };

// Reads any format OpenCV decodes; output is RGB planar in [0,1].
ImageTensor read_image(const std::filesystem::path& path);

// Lossless PNG; 16-bit by default.
void write_png(const std::filesystem::path& path, const ImageTensor& img, BitDepth depth = BitDepth::u16);

// Single-channel mask (1 = valid) as 8-bit PNG.
void write_mask_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& mask, int height,
                    int width);

// Area-resample then centre-crop to a square side x side image.
ImageTensor fit_square(const ImageTensor& img, int side);

// Sorted list of regular files with image extensions.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

} // namespace dereflect::io
