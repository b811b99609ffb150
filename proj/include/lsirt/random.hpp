#pragma once

#include <array>
#include <cstdint>

namespace lsirt {

/// Fixed stream ids keep independent consumers of the same seed from ever
/// drawing overlapping counter ranges.
namespace rng_stream {
inline constexpr std::uint64_t kTriangles = 1;
inline constexpr std::uint64_t kEllipsoids = 2;
inline constexpr std::uint64_t kNoise = 3;
inline constexpr std::uint64_t kInit = 4;
inline constexpr std::uint64_t kTrain = 5;
inline constexpr std::uint64_t kData = 6;
inline constexpr std::uint64_t kOpNorm = 7;
inline constexpr std::uint64_t kElem = 8;
inline constexpr std::uint64_t kTest = 100;
}  // namespace rng_stream

/// One block of the Philox-4x32 keyed counter permutation, 10 rounds.
std::array<std::uint32_t, 4> philox4x32(const std::array<std::uint32_t, 4>& counter,
                                        const std::array<std::uint32_t, 2>& key);

/// philox4x32 with (seed, stream, counter) packed into key and counter words.
std::array<std::uint32_t, 4> philox_block(std::uint64_t seed, std::uint64_t stream,
                                          std::uint64_t counter);

/// Standard normal draw addressed purely by (seed, stream, index); safe to
/// evaluate from any thread in any order.
double normal_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

/// Sequential draws from one (seed, stream) pair. Counter-based underneath,
/// so equal construction arguments always replay the same sequence.
class RandomStream {
public:
    RandomStream(std::uint64_t seed, std::uint64_t stream);

    std::uint32_t next_u32();
    std::uint64_t next_u64();

    /// Uniform on [0, 1).
    double uniform();
    /// Uniform on [lo, hi).
    double uniform(double lo, double hi);
    /// Uniform integer on [0, n), n >= 1.
    std::uint64_t uniform_index(std::uint64_t n);
    /// Standard normal (Box-Muller; the paired value is cached).
    double normal();
    /// Exponential with rate 1.
    double exponential();

private:
    std::uint64_t seed_, stream_, counter_ = 0;
    std::array<std::uint32_t, 4> block_{};
    int pos_ = 4;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

}  // namespace lsirt
