#include "dereflect/rng.hpp"

namespace dereflect {

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose, std::uint64_t index) {
    std::uint64_t h = fnv1a(&base, sizeof base);
    h = fnv1a(purpose.data(), purpose.size(), h);
    h = fnv1a(&index, sizeof index, h);
    // splitmix64 finaliser
    h += 0x9e3779b97f4a7c15ULL;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
    return h ^ (h >> 31);
}

double uniform(Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(rng);
}

Tensor gaussian_tensor(Shape shape, Rng& rng) {
    Tensor t(shape);
    std::normal_distribution<float> d(0.0f, 1.0f);
    for (float& v : t.values()) v = d(rng);
    return t;
}

} // namespace dereflect
