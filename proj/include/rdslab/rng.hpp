#pragma once

// Counter-based random numbers (Philox4x32-10).
//
// Every draw is a pure function of (master_seed, stream_id, substream, block).
// Replica i of an ensemble uses stream_id = i, so ensembles can be evaluated in
// any order, on any number of workers, and still be bitwise reproducible.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace rdslab::rng {

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

namespace detail {

inline constexpr std::uint32_t kMul0 = 0xD2511F53u;
inline constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
inline constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

constexpr void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
    const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
    hi = static_cast<std::uint32_t>(p >> 32);
    lo = static_cast<std::uint32_t>(p);
}

constexpr Counter round(const Counter& c, const Key& k) {
    std::uint32_t hi0 = 0, lo0 = 0, hi1 = 0, lo1 = 0;
    mulhilo(kMul0, c[0], hi0, lo0);
    mulhilo(kMul1, c[2], hi1, lo1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

}  // namespace detail

/// Philox4x32 with 10 rounds.
constexpr Counter philox4x32(Counter ctr, Key key) {
    for (int r = 0; r < 10; ++r) {
        if (r > 0) {
            key[0] += detail::kWeyl0;
            key[1] += detail::kWeyl1;
        }
        ctr = detail::round(ctr, key);
    }
    return ctr;
}

/// Substream purposes. A substream tag is (channel << 8) | purpose.
enum class Purpose : std::uint32_t {
    increment = 0,
    gaussian_component = 1,
    subordinator = 2,
    ou_initial = 3,
    initial_condition = 4,
    pair_sample = 5,
    drift_check = 6,
    misc = 7,
};

constexpr std::uint32_t substream(std::uint32_t channel, Purpose p) {
    return (channel << 8) | static_cast<std::uint32_t>(p);
}

/// One independent stream of blocks. block(i) returns four 32-bit words.
class Stream {
public:
    constexpr Stream(std::uint64_t master_seed, std::uint32_t stream_id, std::uint32_t sub)
        : key_{static_cast<std::uint32_t>(master_seed), static_cast<std::uint32_t>(master_seed >> 32)},
          stream_id_(stream_id),
          sub_(sub) {}

    [[nodiscard]] constexpr Counter block(std::uint64_t index) const {
        return philox4x32({static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                           stream_id_, sub_},
                          key_);
    }

private:
    Key key_;
    std::uint32_t stream_id_;
    std::uint32_t sub_;
};

/// Uniform in the open interval (0, 1) with 52 random bits.
constexpr double open_unit(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t bits = ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 12;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-52;
}

/// Standard normal from two open uniforms (Box-Muller, cosine branch).
inline double box_muller(double u1, double u2) {
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Sequential draw helper over a Stream, two uniforms per block.
///
/// Used where a variable number of draws is needed (rejection-free but
/// data-dependent loops, initial-condition samplers). The sequence is still a
/// pure function of the stream and the starting block.
class Cursor {
public:
    constexpr explicit Cursor(Stream s, std::uint64_t start_block = 0) : stream_(s), next_(start_block) {}

    double uniform() {
        if (!have_spare_) {
            const Counter c = stream_.block(next_++);
            spare_ = open_unit(c[2], c[3]);
            have_spare_ = true;
            return open_unit(c[0], c[1]);
        }
        have_spare_ = false;
        return spare_;
    }

    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return box_muller(u1, u2);
    }

private:
    Stream stream_;
    std::uint64_t next_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace rdslab::rng
