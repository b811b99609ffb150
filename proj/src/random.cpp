#include "lsirt/random.hpp"

#include <cmath>

namespace lsirt {
namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void philox_round(std::array<std::uint32_t, 4>& c, std::uint32_t k0, std::uint32_t k1) {
    std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * c[0];
    std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * c[2];
    std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
    std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
    std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
    std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
    c = {hi1 ^ c[1] ^ k0, lo1, hi0 ^ c[3] ^ k1, lo0};
}

inline double u64_to_unit(std::uint64_t x) {
    // 53 mantissa bits -> [0, 1)
    return static_cast<double>(x >> 11) * 0x1.0p-53;
}

inline std::uint64_t join(std::uint32_t lo, std::uint32_t hi) {
    return static_cast<std::uint64_t>(hi) << 32 | lo;
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(const std::array<std::uint32_t, 4>& counter,
                                        const std::array<std::uint32_t, 2>& key) {
    std::array<std::uint32_t, 4> c = counter;
    std::uint32_t k0 = key[0], k1 = key[1];
    philox_round(c, k0, k1);
    for (int r = 1; r < 10; ++r) {
        k0 += kWeyl0;
        k1 += kWeyl1;
        philox_round(c, k0, k1);
    }
    return c;
}

std::array<std::uint32_t, 4> philox_block(std::uint64_t seed, std::uint64_t stream,
                                          std::uint64_t counter) {
    return philox4x32({static_cast<std::uint32_t>(counter), static_cast<std::uint32_t>(counter >> 32),
                       static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)},
                      {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)});
}

double normal_at(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
    auto b = philox_block(seed, stream, index);
    // (0, 1] for the log argument, [0, 1) for the angle
    double u1 = static_cast<double>((join(b[0], b[1]) >> 11) + 1) * 0x1.0p-53;
    double u2 = u64_to_unit(join(b[2], b[3]));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

RandomStream::RandomStream(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream) {}

std::uint32_t RandomStream::next_u32() {
    if (pos_ == 4) {
        block_ = philox_block(seed_, stream_, counter_++);
        pos_ = 0;
    }
    return block_[pos_++];
}

std::uint64_t RandomStream::next_u64() {
    std::uint32_t lo = next_u32();
    std::uint32_t hi = next_u32();
    return join(lo, hi);
}

double RandomStream::uniform() { return u64_to_unit(next_u64()); }

double RandomStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint64_t RandomStream::uniform_index(std::uint64_t n) {
    // Rejection-free would bias by <= n / 2^64; fine for n << 2^32 but cheap
    // to do right with one retry loop over the top range.
    std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
    for (;;) {
        std::uint64_t x = next_u64();
        if (x < limit) return x % n;
    }
}

double RandomStream::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    cached_normal_ = r * std::sin(a);
    has_cached_normal_ = true;
    return r * std::cos(a);
}

double RandomStream::exponential() { return -std::log1p(-uniform()); }

}  // namespace lsirt
