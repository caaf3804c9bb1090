#include "hierenv/rng.hpp"

#include <cmath>

#include "hierenv/errors.hpp"

namespace hierenv {

namespace {

// SplitMix64 finalizer.
inline uint64_t mix64(uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

}  // namespace

uint64_t RngStream::next_u64() {
    ++counter_;
    return mix64(key_ ^ (counter_ * 0xD1342543DE82EF95ull));
}

double RngStream::uniform() {
    // 53-bit mantissa, offset by half an ulp so 0 and 1 are unreachable.
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

int RngStream::uniform_int(int n) {
    if (n <= 0) throw ContractError("RngStream::uniform_int: n must be positive");
    return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                             static_cast<unsigned __int128>(n)) >> 64);
}

double RngStream::gumbel() {
    return -std::log(-std::log(uniform()));
}

RngStream derive_stream(uint64_t master_seed, std::string_view name, uint64_t index) {
    uint64_t key = mix64(mix64(master_seed ^ fnv1a64(name)) + index);
    return RngStream(key);
}

}  // namespace hierenv
