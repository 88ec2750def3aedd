#pragma once

#include <cstdint>
#include <string_view>

namespace stitch {

// splitmix64 step; used both as a generator and as a seed mixer.
std::uint64_t splitmix64(std::uint64_t& state);

// Derives the seed of a named sub-stream from a root seed. All randomness in
// the artifact flows from one root seed through these named streams so that
// reruns are bit-identical.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t index);
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t a, std::uint64_t b);
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream, std::uint64_t a, std::uint64_t b,
                          std::uint64_t c);

// Deterministic uniform stream. Hand-rolled xoshiro-style core on top of
// splitmix64 so draws are identical across standard libraries.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ULL) {
        // warm up so trivially related seeds decorrelate
        splitmix64(state_);
        splitmix64(state_);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, bound) without modulo bias for small bounds.
    std::uint64_t below(std::uint64_t bound);

private:
    std::uint64_t state_;
};

} // namespace stitch
