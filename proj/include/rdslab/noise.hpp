#pragma once

// Driving-noise paths on uniform time grids.
//
// A NoisePath stores per-step increments in shared immutable storage. Shifting
// or slicing a path only moves a window over that storage, so the shift group
// law and the cocycle identity hold bitwise: a shifted path hands the
// integrator exactly the same increments as the original.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rdslab {

/// Uniform time grid. Grid index k sits at t_origin + (first_index + k) * dt.
struct TimeGrid {
    double t_origin = 0.0;
    double dt = 0.01;
    std::int64_t first_index = 0;
    std::int64_t n_steps = 0;

    static TimeGrid make(double t_start, double dt, std::int64_t n_steps);

    /// Grid with horizon T; throws GridError if T is not a multiple of dt.
    static TimeGrid over(double t_start, double horizon, double dt);

    [[nodiscard]] double time(std::int64_t k) const {
        return t_origin + static_cast<double>(first_index + k) * dt;
    }
    [[nodiscard]] double t_start() const { return time(0); }
    [[nodiscard]] double t_end() const { return time(n_steps); }
    [[nodiscard]] std::int64_t n_points() const { return n_steps + 1; }

    /// Grid of the window [k, k + len] of this grid.
    [[nodiscard]] TimeGrid window(std::int64_t k, std::int64_t len) const;

    void validate() const;

    bool operator==(const TimeGrid&) const = default;
};

/// Number of whole steps of size dt in a horizon; GridError if not a multiple.
std::int64_t steps_in(double horizon, double dt);

struct ChannelKind {
    enum class Type { brownian, stable, poisson, subordinator, zero };

    Type type = Type::brownian;
    double alpha = 2.0;  // stable index, or subordinator index
    double rate = 1.0;   // Poisson intensity
    double jump = 1.0;   // Poisson jump size
    int group = -1;      // stable channels sharing a group >= 0 form one isotropic vector

    static ChannelKind brownian() { return {}; }
    static ChannelKind stable(double alpha, int group = -1) {
        return {Type::stable, alpha, 1.0, 1.0, group};
    }
    static ChannelKind poisson(double rate, double jump = 1.0) {
        return {Type::poisson, 2.0, rate, jump, -1};
    }
    static ChannelKind subordinator(double alpha) { return {Type::subordinator, alpha, 1.0, 1.0, -1}; }
    static ChannelKind zero() { return {Type::zero, 2.0, 1.0, 1.0, -1}; }

    void validate() const;
    [[nodiscard]] bool nondecreasing() const { return type == Type::poisson || type == Type::subordinator; }
    [[nodiscard]] std::string describe() const;

    bool operator==(const ChannelKind&) const = default;
};

/// A realization of the driving noise on a grid.
class NoisePath {
public:
    NoisePath(TimeGrid grid, std::vector<ChannelKind> kinds, std::uint64_t master_seed,
              std::uint64_t stream_id, std::shared_ptr<const std::vector<double>> increments,
              std::int64_t first_row, std::int64_t pin_index);

    [[nodiscard]] const TimeGrid& grid() const { return grid_; }
    [[nodiscard]] std::int64_t n_steps() const { return grid_.n_steps; }
    [[nodiscard]] int channels() const { return static_cast<int>(kinds_.size()); }
    [[nodiscard]] const std::vector<ChannelKind>& kinds() const { return kinds_; }
    [[nodiscard]] std::uint64_t master_seed() const { return master_seed_; }
    [[nodiscard]] std::uint64_t stream_id() const { return stream_id_; }

    /// Grid index at which the path value is pinned to zero.
    [[nodiscard]] std::int64_t pin_index() const { return pin_; }

    /// Increments L(t_{k+1}) - L(t_k) over step k, one entry per channel.
    [[nodiscard]] std::span<const double> increment(std::int64_t k) const {
        return {storage_->data() + (first_row_ + k) * channels(), static_cast<std::size_t>(channels())};
    }

    /// Path value at grid index k, channel ch.
    [[nodiscard]] double value(std::int64_t k, int ch) const;

    /// All values, row-major (n_steps + 1) x channels.
    [[nodiscard]] std::vector<double> values() const;

    /// Window [k, k + len]; the window is pinned at its first index.
    [[nodiscard]] NoisePath slice(std::int64_t k, std::int64_t len) const;

    /// Hash of grid, kinds and the increments in view. Identical windows give
    /// identical fingerprints.
    [[nodiscard]] std::uint64_t fingerprint() const;

    /// True when both paths view the very same increments.
    [[nodiscard]] bool same_increments(const NoisePath& other) const;

    /// CSV dump: header t,ch0,ch1,... and one row per grid point, shortest round-trip numbers.
    void write_csv(std::ostream& os) const;

private:
    TimeGrid grid_;
    std::vector<ChannelKind> kinds_;
    std::uint64_t master_seed_;
    std::uint64_t stream_id_;
    std::shared_ptr<const std::vector<double>> storage_;
    std::int64_t first_row_;
    std::int64_t pin_;
};

/// Samples increments for steps with absolute step counters [begin, end).
///
/// The increment of absolute step j depends only on (kinds, dt, master_seed,
/// stream_id, j); this is what makes one-sided and two-sided paths agree on
/// their common time range.
NoisePath sample_path(const std::vector<ChannelKind>& kinds, const TimeGrid& grid,
                      std::uint64_t master_seed, std::uint64_t stream_id);

/// theta_k: the path seen from grid index k, re-pinned there.
NoisePath shift_path(const NoisePath& path, std::int64_t k);

/// Path on [-t_past, t_future] pinned to zero at time 0.
NoisePath sample_two_sided(const std::vector<ChannelKind>& kinds, double t_past, double t_future,
                           double dt, std::uint64_t master_seed, std::uint64_t stream_id);

struct OUPath {
    enum class Source { shared_brownian_channel, standalone_stationary };

    TimeGrid grid;
    double lambda = 1.0;
    double gamma = 0.0;
    std::vector<double> values;
    Source source = Source::shared_brownian_channel;
    int channel = 0;

    /// Value at the grid point nearest to time t; AlignmentError off-grid.
    [[nodiscard]] double at_time(double t) const;
    [[nodiscard]] double stationary_variance() const { return gamma * gamma / (2.0 * lambda); }
};

/// OU functional of a Brownian channel: O(k+1) = e^{-lambda dt} O(k) + gamma dW(k),
/// with O(0) drawn from the stationary law N(0, gamma^2 / (2 lambda)).
OUPath ou_from_path(const NoisePath& path, int channel, double lambda, double gamma);

/// OU path driven by its own Brownian motion, stationary start.
OUPath ou_stationary(const TimeGrid& grid, double lambda, double gamma, std::uint64_t master_seed,
                     std::uint64_t stream_id);

}  // namespace rdslab
