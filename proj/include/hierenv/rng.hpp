#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace hierenv {

// Counter-based generator: every draw is a pure function of (key, counter),
// so streams are value types that can be copied to freeze or replay a
// sequence. Independent streams are derived from one master seed by name
// (and an optional index, e.g. one sub-stream per generated graph).
class RngStream {
public:
    RngStream() = default;
    RngStream(uint64_t key, uint64_t counter = 0) : key_(key), counter_(counter) {}

    uint64_t next_u64();

    // Uniform on the open interval (0, 1); never returns an exact endpoint.
    double uniform();
    double uniform(double lo, double hi);

    // Uniform integer in [0, n). n must be positive.
    int uniform_int(int n);

    bool bernoulli(double p) { return uniform() < p; }

    // Standard Gumbel(0, 1) variate, -log(-log(u)).
    double gumbel();

    uint64_t key() const { return key_; }
    uint64_t counter() const { return counter_; }

private:
    uint64_t key_ = 0;
    uint64_t counter_ = 0;
};

// Derives the stream identified by (name, index) from a master seed.
RngStream derive_stream(uint64_t master_seed, std::string_view name, uint64_t index = 0);

// Named streams used across a run. Kept as a plain value so any consumer can
// copy the whole pack to freeze the random state (finite-difference checks
// replay the same copy for every loss evaluation).
struct RngPack {
    uint64_t master_seed = 0;

    RngStream data;     // shuffles, splits
    RngStream gumbel;   // edge-selection noise
    RngStream dropout;  // dropout masks
    RngStream init;     // weight initialization

    explicit RngPack(uint64_t seed = 0)
        : master_seed(seed),
          data(derive_stream(seed, "data")),
          gumbel(derive_stream(seed, "gumbel")),
          dropout(derive_stream(seed, "dropout")),
          init(derive_stream(seed, "init")) {}
};

}  // namespace hierenv
