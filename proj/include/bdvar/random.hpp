#pragma once

#include <cstdint>
#include <random>

namespace bdvar {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives an independent 64-bit seed for a (seed, stream) pair.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

// Stream tags keep the different consumers of one user seed apart.
enum class StreamTag : std::uint64_t {
    paths = 0,
    spsa_perturbation = 1,
    spsa_evaluation = 2,
    spsa_final = 3,
    random_drifts = 4,
    b2_triples = 5,
};

inline constexpr std::uint64_t tagged_seed(std::uint64_t seed, StreamTag tag, std::uint64_t index = 0) {
    return derive_seed(derive_seed(seed, static_cast<std::uint64_t>(tag) + 0x1000), index);
}

// One generator per path index: output depends only on (seed, stream),
// which is what makes batch results independent of the thread count.
class StreamRng {
public:
    StreamRng(std::uint64_t seed, std::uint64_t stream) : engine_(derive_seed(seed, stream)) {}

    double gaussian() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }
    int rademacher() { return (engine_() >> 63) ? 1 : -1; }
    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace bdvar
