#include "rdslab/noise.hpp"

#include <fmt/format.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <ostream>

#include "rdslab/errors.hpp"
#include "rdslab/rng.hpp"

namespace rdslab {

namespace {

constexpr double kPi = std::numbers::pi;

std::uint32_t checked_stream(std::uint64_t stream_id) {
    if (stream_id > std::numeric_limits<std::uint32_t>::max()) {
        throw ParameterError("stream_id must fit in 32 bits");
    }
    return static_cast<std::uint32_t>(stream_id);
}

// Symmetric alpha-stable variate with characteristic function exp(-|xi|^alpha)
// (Chambers-Mallows-Stuck). v uniform on (-pi/2, pi/2), w standard exponential.
double symmetric_stable(double alpha, double v, double w) {
    if (alpha == 1.0) {
        return std::tan(v);
    }
    const double a = std::sin(alpha * v) / std::pow(std::cos(v), 1.0 / alpha);
    const double b = std::pow(std::cos(v - alpha * v) / w, (1.0 - alpha) / alpha);
    return a * b;
}

// Positive stable variate with Laplace transform exp(-s^a), 0 < a <= 1
// (Kanter's representation). u uniform on (0, pi), w standard exponential.
double positive_stable(double a, double u, double w) {
    if (a == 1.0) {
        return 1.0;
    }
    const double num = std::sin(a * u) / std::pow(std::sin(u), 1.0 / a);
    const double tail = std::pow(std::sin((1.0 - a) * u) / w, (1.0 - a) / a);
    return num * tail;
}

int poisson_count(double mean, double u) {
    double p = std::exp(-mean);
    double cdf = p;
    int n = 0;
    while (u > cdf && n < 1000) {
        ++n;
        p *= mean / n;
        cdf += p;
        if (p == 0.0) {
            break;
        }
    }
    return n;
}

void validate_kinds(const std::vector<ChannelKind>& kinds, double dt) {
    if (kinds.empty()) {
        throw ParameterError("a noise path needs at least one channel");
    }
    for (std::size_t c = 0; c < kinds.size(); ++c) {
        kinds[c].validate();
        if (kinds[c].type == ChannelKind::Type::poisson && kinds[c].rate * dt > 0.1 + 1e-12) {
            throw ParameterError(fmt::format("channel {}: Poisson rate*dt = {} exceeds 0.1", c,
                                             kinds[c].rate * dt));
        }
        if (kinds[c].type == ChannelKind::Type::stable && kinds[c].group >= 0) {
            for (std::size_t o = 0; o < c; ++o) {
                if (kinds[o].type == ChannelKind::Type::stable && kinds[o].group == kinds[c].group &&
                    kinds[o].alpha != kinds[c].alpha) {
                    throw ParameterError("isotropic stable group mixes different alpha values");
                }
            }
        }
    }
}

// Increments for absolute step counters [begin, begin + count), row-major.
std::vector<double> sample_increments(const std::vector<ChannelKind>& kinds, double dt,
                                      std::uint64_t master_seed, std::uint32_t stream_id,
                                      std::int64_t begin, std::int64_t count) {
    const auto m = kinds.size();
    std::vector<double> inc(static_cast<std::size_t>(count) * m, 0.0);
    const double sqrt_dt = std::sqrt(dt);

    for (std::size_t c = 0; c < m; ++c) {
        const ChannelKind& kind = kinds[c];
        const auto ch = static_cast<std::uint32_t>(c);
        const rng::Stream main(master_seed, stream_id, rng::substream(ch, rng::Purpose::increment));
        switch (kind.type) {
            case ChannelKind::Type::zero:
                break;
            case ChannelKind::Type::brownian:
                for (std::int64_t k = 0; k < count; ++k) {
                    const auto b = main.block(static_cast<std::uint64_t>(begin + k));
                    inc[k * m + c] = sqrt_dt * rng::box_muller(rng::open_unit(b[0], b[1]),
                                                               rng::open_unit(b[2], b[3]));
                }
                break;
            case ChannelKind::Type::stable: {
                const double scale = std::pow(dt, 1.0 / kind.alpha);
                if (kind.group < 0) {
                    for (std::int64_t k = 0; k < count; ++k) {
                        const auto b = main.block(static_cast<std::uint64_t>(begin + k));
                        const double v = kPi * (rng::open_unit(b[0], b[1]) - 0.5);
                        const double w = -std::log(rng::open_unit(b[2], b[3]));
                        inc[k * m + c] = scale * symmetric_stable(kind.alpha, v, w);
                    }
                } else {
                    // Subordinated Brownian motion: sqrt(2A) G with A positive
                    // (alpha/2)-stable, shared by every channel of the group.
                    const rng::Stream sub(master_seed, stream_id,
                                          rng::substream(static_cast<std::uint32_t>(kind.group),
                                                         rng::Purpose::subordinator));
                    const rng::Stream gauss(master_seed, stream_id,
                                            rng::substream(ch, rng::Purpose::gaussian_component));
                    const double a = kind.alpha / 2.0;
                    for (std::int64_t k = 0; k < count; ++k) {
                        const auto idx = static_cast<std::uint64_t>(begin + k);
                        const auto bs = sub.block(idx);
                        const double u = kPi * rng::open_unit(bs[0], bs[1]);
                        const double w = -std::log(rng::open_unit(bs[2], bs[3]));
                        const double time_change = positive_stable(a, u, w);
                        const auto bg = gauss.block(idx);
                        const double g = rng::box_muller(rng::open_unit(bg[0], bg[1]),
                                                         rng::open_unit(bg[2], bg[3]));
                        inc[k * m + c] = scale * std::sqrt(2.0 * time_change) * g;
                    }
                }
                break;
            }
            case ChannelKind::Type::subordinator: {
                const double scale = std::pow(dt, 1.0 / kind.alpha);
                for (std::int64_t k = 0; k < count; ++k) {
                    const auto b = main.block(static_cast<std::uint64_t>(begin + k));
                    const double u = kPi * rng::open_unit(b[0], b[1]);
                    const double w = -std::log(rng::open_unit(b[2], b[3]));
                    inc[k * m + c] = scale * positive_stable(kind.alpha, u, w);
                }
                break;
            }
            case ChannelKind::Type::poisson: {
                const double mean = kind.rate * dt;
                for (std::int64_t k = 0; k < count; ++k) {
                    const auto b = main.block(static_cast<std::uint64_t>(begin + k));
                    inc[k * m + c] = kind.jump * poisson_count(mean, rng::open_unit(b[0], b[1]));
                }
                break;
            }
        }
    }
    return inc;
}

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

// ---------------------------------------------------------------- TimeGrid

TimeGrid TimeGrid::make(double t_start, double dt, std::int64_t n_steps) {
    TimeGrid g{t_start, dt, 0, n_steps};
    g.validate();
    return g;
}

TimeGrid TimeGrid::over(double t_start, double horizon, double dt) {
    if (!(dt > 0.0)) {
        throw ParameterError("dt must be positive");
    }
    return make(t_start, dt, steps_in(horizon, dt));
}

TimeGrid TimeGrid::window(std::int64_t k, std::int64_t len) const {
    if (k < 0 || len < 0 || k + len > n_steps) {
        throw IndexError(fmt::format("window [{}, {}] outside grid with {} steps", k, k + len, n_steps));
    }
    return {t_origin, dt, first_index + k, len};
}

void TimeGrid::validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) {
        throw ParameterError("dt must be positive and finite");
    }
    if (n_steps < 0) {
        throw ParameterError("n_steps must be nonnegative");
    }
    if (!std::isfinite(t_origin)) {
        throw ParameterError("grid origin must be finite");
    }
}

std::int64_t steps_in(double horizon, double dt) {
    if (!(dt > 0.0)) {
        throw ParameterError("dt must be positive");
    }
    if (horizon < 0.0 || !std::isfinite(horizon)) {
        throw GridError(fmt::format("horizon {} must be finite and nonnegative", horizon));
    }
    const double ratio = horizon / dt;
    const double rounded = std::round(ratio);
    if (std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio)) {
        throw GridError(fmt::format("horizon {} is not a multiple of dt = {}", horizon, dt));
    }
    return static_cast<std::int64_t>(rounded);
}

// ------------------------------------------------------------- ChannelKind

void ChannelKind::validate() const {
    switch (type) {
        case Type::stable:
            if (!(alpha > 0.0 && alpha <= 2.0)) {
                throw ParameterError(fmt::format("stable index alpha = {} outside (0, 2]", alpha));
            }
            break;
        case Type::subordinator:
            if (!(alpha > 0.0 && alpha < 1.0)) {
                throw ParameterError(fmt::format("subordinator index alpha = {} outside (0, 1)", alpha));
            }
            break;
        case Type::poisson:
            if (!(rate > 0.0) || !std::isfinite(rate)) {
                throw ParameterError(fmt::format("Poisson rate {} must be positive", rate));
            }
            if (!std::isfinite(jump)) {
                throw ParameterError("Poisson jump size must be finite");
            }
            break;
        case Type::brownian:
        case Type::zero:
            break;
    }
}

std::string ChannelKind::describe() const {
    switch (type) {
        case Type::brownian: return "brownian";
        case Type::stable:
            return group < 0 ? fmt::format("stable({})", alpha) : fmt::format("stable({},group={})", alpha, group);
        case Type::poisson: return fmt::format("poisson({},{})", rate, jump);
        case Type::subordinator: return fmt::format("subordinator({})", alpha);
        case Type::zero: return "zero";
    }
    return "?";
}

// --------------------------------------------------------------- NoisePath

NoisePath::NoisePath(TimeGrid grid, std::vector<ChannelKind> kinds, std::uint64_t master_seed,
                     std::uint64_t stream_id, std::shared_ptr<const std::vector<double>> increments,
                     std::int64_t first_row, std::int64_t pin_index)
    : grid_(grid),
      kinds_(std::move(kinds)),
      master_seed_(master_seed),
      stream_id_(stream_id),
      storage_(std::move(increments)),
      first_row_(first_row),
      pin_(pin_index) {
    grid_.validate();
    if (!storage_ || kinds_.empty()) {
        throw ParameterError("noise path needs storage and at least one channel");
    }
    const auto rows = static_cast<std::int64_t>(storage_->size() / kinds_.size());
    if (first_row_ < 0 || first_row_ + grid_.n_steps > rows) {
        throw IndexError("noise path window exceeds its storage");
    }
    if (pin_ < 0 || pin_ > grid_.n_steps) {
        throw IndexError("pin index outside the grid");
    }
}

double NoisePath::value(std::int64_t k, int ch) const {
    if (k < 0 || k > grid_.n_steps) {
        throw IndexError(fmt::format("grid index {} outside [0, {}]", k, grid_.n_steps));
    }
    if (ch < 0 || ch >= channels()) {
        throw IndexError(fmt::format("channel {} outside [0, {})", ch, channels()));
    }
    double s = 0.0;
    if (k >= pin_) {
        for (std::int64_t i = pin_; i < k; ++i) {
            s += increment(i)[ch];
        }
    } else {
        for (std::int64_t i = pin_ - 1; i >= k; --i) {
            s -= increment(i)[ch];
        }
    }
    return s;
}

std::vector<double> NoisePath::values() const {
    const int m = channels();
    const std::int64_t n = grid_.n_steps;
    std::vector<double> out(static_cast<std::size_t>((n + 1) * m), 0.0);
    for (std::int64_t k = pin_; k < n; ++k) {
        const auto inc = increment(k);
        for (int c = 0; c < m; ++c) {
            out[(k + 1) * m + c] = out[k * m + c] + inc[c];
        }
    }
    for (std::int64_t k = pin_ - 1; k >= 0; --k) {
        const auto inc = increment(k);
        for (int c = 0; c < m; ++c) {
            out[k * m + c] = out[(k + 1) * m + c] - inc[c];
        }
    }
    return out;
}

NoisePath NoisePath::slice(std::int64_t k, std::int64_t len) const {
    const TimeGrid g = grid_.window(k, len);
    return NoisePath(g, kinds_, master_seed_, stream_id_, storage_, first_row_ + k, 0);
}

std::uint64_t NoisePath::fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    h = fnv1a(h, &grid_.dt, sizeof grid_.dt);
    h = fnv1a(h, &grid_.n_steps, sizeof grid_.n_steps);
    for (const auto& k : kinds_) {
        const int t = static_cast<int>(k.type);
        h = fnv1a(h, &t, sizeof t);
        h = fnv1a(h, &k.alpha, sizeof k.alpha);
    }
    if (grid_.n_steps > 0) {
        const double* p = storage_->data() + first_row_ * channels();
        h = fnv1a(h, p, static_cast<std::size_t>(grid_.n_steps * channels()) * sizeof(double));
    }
    return h;
}

bool NoisePath::same_increments(const NoisePath& other) const {
    if (grid_.n_steps != other.grid_.n_steps || channels() != other.channels()) {
        return false;
    }
    if (storage_ == other.storage_ && first_row_ == other.first_row_) {
        return true;
    }
    const auto n = static_cast<std::size_t>(grid_.n_steps * channels());
    return n == 0 || std::memcmp(storage_->data() + first_row_ * channels(),
                                 other.storage_->data() + other.first_row_ * other.channels(),
                                 n * sizeof(double)) == 0;
}

void NoisePath::write_csv(std::ostream& os) const {
    os << "t";
    for (int c = 0; c < channels(); ++c) {
        os << ",ch" << c;
    }
    os << '\n';
    const auto v = values();
    const int m = channels();
    for (std::int64_t k = 0; k <= grid_.n_steps; ++k) {
        os << fmt::format("{}", grid_.time(k));
        for (int c = 0; c < m; ++c) {
            os << fmt::format(",{}", v[k * m + c]);
        }
        os << '\n';
    }
}

// ---------------------------------------------------------------- samplers

NoisePath sample_path(const std::vector<ChannelKind>& kinds, const TimeGrid& grid,
                      std::uint64_t master_seed, std::uint64_t stream_id) {
    grid.validate();
    validate_kinds(kinds, grid.dt);
    const std::uint32_t sid = checked_stream(stream_id);
    auto inc = std::make_shared<const std::vector<double>>(
        sample_increments(kinds, grid.dt, master_seed, sid, grid.first_index, grid.n_steps));
    return NoisePath(grid, kinds, master_seed, stream_id, std::move(inc), 0, 0);
}

NoisePath shift_path(const NoisePath& path, std::int64_t k) {
    if (k < 0 || k > path.n_steps()) {
        throw IndexError(fmt::format("shift {} outside [0, {}]", k, path.n_steps()));
    }
    return path.slice(k, path.n_steps() - k);
}

NoisePath sample_two_sided(const std::vector<ChannelKind>& kinds, double t_past, double t_future,
                           double dt, std::uint64_t master_seed, std::uint64_t stream_id) {
    if (!(dt > 0.0)) {
        throw ParameterError("dt must be positive");
    }
    const std::int64_t past = steps_in(t_past, dt);
    const std::int64_t future = steps_in(t_future, dt);
    const TimeGrid grid{0.0, dt, -past, past + future};
    validate_kinds(kinds, dt);
    const std::uint32_t sid = checked_stream(stream_id);
    auto inc = std::make_shared<const std::vector<double>>(
        sample_increments(kinds, dt, master_seed, sid, -past, past + future));
    return NoisePath(grid, kinds, master_seed, stream_id, std::move(inc), 0, past);
}

// --------------------------------------------------------------------- OU

double OUPath::at_time(double t) const {
    const double r = (t - grid.t_origin) / grid.dt;
    const std::int64_t k = std::llround(r) - grid.first_index;
    if (k < 0 || k > grid.n_steps || std::abs(grid.time(k) - t) > 1e-9 * std::max(1.0, std::abs(t))) {
        throw AlignmentError(fmt::format("time {} is not a grid point of the OU path", t));
    }
    return values[static_cast<std::size_t>(k)];
}

namespace {

OUPath ou_recursion(const NoisePath& path, int channel, double lambda, double gamma, OUPath::Source src) {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
        throw ParameterError("OU relaxation rate must be positive");
    }
    if (!std::isfinite(gamma)) {
        throw ParameterError("OU intensity must be finite");
    }
    if (channel < 0 || channel >= path.channels()) {
        throw IndexError(fmt::format("channel {} outside [0, {})", channel, path.channels()));
    }
    if (path.kinds()[channel].type != ChannelKind::Type::brownian) {
        throw KindError(fmt::format("OU functional needs a brownian channel, got {}",
                                    path.kinds()[channel].describe()));
    }
    OUPath ou;
    ou.grid = path.grid();
    ou.lambda = lambda;
    ou.gamma = gamma;
    ou.source = src;
    ou.channel = channel;
    ou.values.resize(static_cast<std::size_t>(path.n_steps() + 1));

    const rng::Stream init(path.master_seed(), checked_stream(path.stream_id()),
                           rng::substream(static_cast<std::uint32_t>(channel), rng::Purpose::ou_initial));
    const auto b = init.block(static_cast<std::uint64_t>(path.grid().first_index));
    const double z = rng::box_muller(rng::open_unit(b[0], b[1]), rng::open_unit(b[2], b[3]));
    ou.values[0] = std::sqrt(ou.stationary_variance()) * z;

    const double decay = std::exp(-lambda * path.grid().dt);
    for (std::int64_t k = 0; k < path.n_steps(); ++k) {
        ou.values[k + 1] = decay * ou.values[k] + gamma * path.increment(k)[channel];
    }
    return ou;
}

}  // namespace

OUPath ou_from_path(const NoisePath& path, int channel, double lambda, double gamma) {
    return ou_recursion(path, channel, lambda, gamma, OUPath::Source::shared_brownian_channel);
}

OUPath ou_stationary(const TimeGrid& grid, double lambda, double gamma, std::uint64_t master_seed,
                     std::uint64_t stream_id) {
    const NoisePath w = sample_path({ChannelKind::brownian()}, grid, master_seed, stream_id);
    return ou_recursion(w, 0, lambda, gamma, OUPath::Source::standalone_stationary);
}

}  // namespace rdslab
