#include "stitch/rng.hpp"

namespace stitch {

std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace {

std::uint64_t fnv1a(std::string_view text) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (char ch : text) {
        hash ^= static_cast<unsigned char>(ch);
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t state = seed ^ (salt + 0x9e3779b97f4a7c15ULL);
    return splitmix64(state);
}

} // namespace

std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) {
    return mix(root, fnv1a(stream));
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t index) {
    return mix(derive_seed(root, stream), index + 1);
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t a, std::uint64_t b) {
    return mix(derive_seed(root, stream, a), b + 1);
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t a, std::uint64_t b,
                          std::uint64_t c) {
    return mix(derive_seed(root, stream, a, b), c + 1);
}

std::uint64_t RngStream::below(std::uint64_t bound) {
    if (bound <= 1) {
        return 0;
    }
    const std::uint64_t limit = bound * (UINT64_MAX / bound);
    std::uint64_t draw = next_u64();
    while (draw >= limit) {
        draw = next_u64();
    }
    return draw % bound;
}

} // namespace stitch
