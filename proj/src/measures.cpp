#include "rdslab/measures.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

#include "rdslab/errors.hpp"
#include "rdslab/metric.hpp"
#include "rdslab/rds.hpp"

namespace rdslab {

namespace {

constexpr std::int64_t kChunkSteps = std::int64_t{1} << 20;

double quantile_sorted(const std::vector<double>& v, double q) {
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    if (i + 1 >= v.size()) {
        return v.back();
    }
    const double f = pos - static_cast<double>(i);
    return v[i] + f * (v[i + 1] - v[i]);
}

std::string describe_kinds(const std::vector<ChannelKind>& kinds) {
    std::string s;
    for (const auto& k : kinds) {
        s += (s.empty() ? "" : "+") + k.describe();
    }
    return s;
}

}  // namespace

std::vector<double> SampleCloud::coordinate(int i) const {
    if (i < 0 || i >= dim) {
        throw IndexError(fmt::format("coordinate {} outside [0, {})", i, dim));
    }
    std::vector<double> out(static_cast<std::size_t>(size()));
    for (std::int64_t k = 0; k < size(); ++k) {
        out[k] = samples[k * dim + i];
    }
    return out;
}

CoordinateSummary SampleCloud::summarize(int i, int n_batches) const {
    const auto v = coordinate(i);
    CoordinateSummary s;
    s.mean = batch_means_count(v, n_batches, fmt::format("mean x{}", i));
    std::vector<double> sq(v.size()), dev(v.size());
    for (std::size_t k = 0; k < v.size(); ++k) {
        sq[k] = v[k] * v[k];
        dev[k] = (v[k] - s.mean.mean) * (v[k] - s.mean.mean);
    }
    s.second_moment = batch_means_count(sq, n_batches, fmt::format("E x{}^2", i));
    s.variance = batch_means_count(dev, n_batches, fmt::format("var x{}", i));
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    s.quantile_levels = {0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99};
    for (double q : s.quantile_levels) {
        s.quantiles.push_back(quantile_sorted(sorted, q));
    }
    return s;
}

void SampleCloud::write_csv(std::ostream& os) const {
    os << "# schema=rds-lab.v1\n";
    os << "idx";
    for (int i = 0; i < dim; ++i) {
        os << ",x" << i;
    }
    os << '\n';
    for (std::int64_t k = 0; k < size(); ++k) {
        os << k;
        for (double v : sample(k)) {
            os << fmt::format(",{}", v);
        }
        os << '\n';
    }
}

SampleCloud sample_invariant(const SystemSpec& system, const std::vector<ChannelKind>& kinds,
                             const InvariantOptions& options) {
    if (options.n_samples < 1) {
        throw ParameterError("need at least one sample");
    }
    if (options.thin < 1) {
        throw ParameterError("thinning must be at least 1");
    }
    if (!(options.dt > 0.0)) {
        throw ParameterError("dt must be positive");
    }
    const std::int64_t keep_steps = options.n_samples * options.thin;
    std::int64_t burn_steps = 0;
    double burn_in = options.burn_in;
    if (burn_in < 0.0) {
        burn_steps = static_cast<std::int64_t>(std::ceil(0.25 * static_cast<double>(keep_steps)));
        burn_in = static_cast<double>(burn_steps) * options.dt;
    } else {
        burn_steps = burn_in == 0.0 ? 0 : steps_in(burn_in, options.dt);
    }
    const std::int64_t total = burn_steps + keep_steps;
    const Scheme scheme = options.scheme ? *options.scheme : default_scheme(system);

    SampleCloud cloud;
    cloud.dim = system.dim();
    cloud.burn_in = burn_in;
    cloud.thin = options.thin;
    cloud.dt = options.dt;
    cloud.system = system.name();
    cloud.noise = describe_kinds(kinds);
    cloud.samples.reserve(static_cast<std::size_t>(options.n_samples * cloud.dim));

    std::vector<double> x = options.x0.empty() ? std::vector<double>(static_cast<std::size_t>(system.dim()), 0.0)
                                               : options.x0;
    // Increments depend only on the absolute step index, so a chunked path
    // equals the full path. The OU-driven system needs its OU path in one piece.
    const std::int64_t chunk = system.requires_aux() ? total : kChunkSteps;
    for (std::int64_t start = 0; start < total; start += chunk) {
        const std::int64_t len = std::min(chunk, total - start);
        TimeGrid grid{0.0, options.dt, start, len};
        const NoisePath path = sample_path(kinds, grid, options.master_seed, options.stream_id);
        try {
            x = integrate_observed(bind_path(system, path), x, path, scheme,
                                   [&](std::int64_t k, std::span<const double> s) {
                                       const std::int64_t g = start + k;
                                       if (k > 0 && g > burn_steps && (g - burn_steps) % options.thin == 0) {
                                           cloud.samples.insert(cloud.samples.end(), s.begin(), s.end());
                                       }
                                   });
        } catch (const BlowUpError& e) {
            throw BlowUpError(fmt::format("{} blew up at step {} with {} and dt={}; reduce dt or use tamed_euler",
                                          system.name(), start + e.index(), to_string(scheme), options.dt),
                              start + e.index());
        }
    }
    return cloud;
}

EnsembleStat ball_mass(const SampleCloud& cloud, std::span<const double> center, double R,
                       std::span<const double> weights) {
    if (!(R > 0.0)) {
        throw ParameterError("ball radius must be positive");
    }
    if (static_cast<int>(center.size()) != cloud.dim) {
        throw ParameterError("ball center dimension does not match the cloud");
    }
    std::int64_t inside = 0;
    for (std::int64_t k = 0; k < cloud.size(); ++k) {
        if (weighted_distance(cloud.sample(k), center, weights) <= R) {
            ++inside;
        }
    }
    return proportion_stat(inside, cloud.size(), fmt::format("rho(B(c,{}))", R));
}

std::vector<BallMassRow> ball_mass_sweep(const std::function<SampleCloud(double)>& make_cloud,
                                         const std::vector<double>& sigmas, std::span<const double> center, double R) {
    std::vector<BallMassRow> rows;
    for (double s : sigmas) {
        const SampleCloud cloud = make_cloud(s);
        rows.push_back({s, R, ball_mass(cloud, center, R)});
    }
    return rows;
}

void write_sweep_csv(std::ostream& os, const std::vector<BallMassRow>& rows) {
    os << "# schema=rds-lab.v1\n";
    os << "sigma,R,mass,ci_low,ci_high\n";
    for (const auto& r : rows) {
        os << fmt::format("{},{},{},{},{}\n", r.sigma, r.R, r.mass.mean, r.mass.ci_low,
                          r.mass.ci_high);
    }
}

double folded_normal_mean(double c, double s) {
    if (!(s >= 0.0)) {
        throw ParameterError("standard deviation must be nonnegative");
    }
    if (s == 0.0) {
        return std::abs(c);
    }
    return s * std::sqrt(2.0 / std::numbers::pi) * std::exp(-c * c / (2.0 * s * s)) +
           c * std::erf(c / (s * std::numbers::sqrt2));
}

EnsembleStat ergodic_average(std::span<const double> series, std::int64_t batch_len) {
    return batch_means(series, batch_len, "time average");
}

double lorenz_functional(std::span<const double> x, double rho, double sigma) {
    const double w = x[2] - rho - sigma;
    return 0.5 * (x[0] * x[0] + x[1] * x[1] + w * w);
}

double lorenz_k(double sigma, double beta) {
    return std::min({sigma, beta / 2.0, 2.0});
}

AbsorbingReport lorenz_absorbing_check(const Trajectory& trajectory, const OUPath& ou, double rho, double sigma,
                                       double beta, double lambda, std::optional<double> tol_constant) {
    if (trajectory.dim != 3) {
        throw ParameterError("absorbing check needs a three-dimensional trajectory");
    }
    if (!(trajectory.grid == ou.grid)) {
        throw AlignmentError("trajectory and OU path live on different grids");
    }
    const auto& grid = trajectory.grid;
    const double dt = grid.dt;
    AbsorbingReport rep;
    rep.K = lorenz_k(sigma, beta);
    rep.n_steps = grid.n_steps;
    for (std::int64_t k = 0; k <= grid.n_steps; ++k) {
        rep.max_L = std::max(rep.max_L, lorenz_functional(trajectory.state(k), rho, sigma));
        rep.max_O2 = std::max(rep.max_O2, ou.values[k] * ou.values[k]);
    }
    rep.tol_constant = tol_constant ? *tol_constant : 10.0 * (1.0 + rep.max_L) * (1.0 + rep.max_O2);
    rep.tol = rep.tol_constant * dt * dt;
    rep.max_margin = -std::numeric_limits<double>::infinity();
    const double m0 = 0.5 * beta * (rho + sigma) * (rho + sigma);
    const double m1 = (2.0 / beta) * (lambda - beta) * (lambda - beta);
    for (std::int64_t k = 0; k < grid.n_steps; ++k) {
        const double l0 = lorenz_functional(trajectory.state(k), rho, sigma);
        const double l1 = lorenz_functional(trajectory.state(k + 1), rho, sigma);
        const double o2 = ou.values[k] * ou.values[k];
        const double rhs = l0 + dt * ((-rep.K + o2 / sigma) * l0 + m0 + m1 * o2);
        const double margin = l1 - rhs;
        if (margin > rep.max_margin) {
            rep.max_margin = margin;
            rep.worst_step = k;
        }
        if (margin > rep.tol) {
            ++rep.violations;
        }
    }
    return rep;
}

}  // namespace rdslab
