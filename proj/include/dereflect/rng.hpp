#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "dereflect/tensor.hpp"

namespace dereflect {

using Rng = std::mt19937_64;

// Derives an independent stream seed from a base seed and a purpose tag
// ("data", "noise", "init", ...), so each consumer owns its own stream.
std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose, std::uint64_t index = 0);

inline Rng make_stream(std::uint64_t base, std::string_view purpose, std::uint64_t index = 0) {
    return Rng(derive_seed(base, purpose, index));
}

double uniform(Rng& rng, double lo, double hi);

// Fills a tensor with independent standard normal samples.
Tensor gaussian_tensor(Shape shape, Rng& rng);

// FNV-1a over raw bytes.
std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 1469598103934665603ULL);

} // namespace dereflect
