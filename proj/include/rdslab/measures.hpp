#pragma once

// Long-run statistics: empirical invariant measures, ball masses, ergodic
// averages and the Lorenz absorbing-set inequality.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rdslab/integrate.hpp"
#include "rdslab/noise.hpp"
#include "rdslab/stats.hpp"
#include "rdslab/systems.hpp"

namespace rdslab {

struct CoordinateSummary {
    EnsembleStat mean;
    EnsembleStat second_moment;  // E x^2
    EnsembleStat variance;       // E (x - mean)^2
    std::vector<double> quantile_levels;
    std::vector<double> quantiles;
};

struct SampleCloud {
    int dim = 0;
    std::vector<double> samples;  // n x dim, row-major
    double burn_in = 0.0;
    std::int64_t thin = 1;
    double dt = 0.0;
    std::string system;
    std::string noise;

    [[nodiscard]] std::int64_t size() const { return dim == 0 ? 0 : static_cast<std::int64_t>(samples.size()) / dim; }
    [[nodiscard]] std::span<const double> sample(std::int64_t i) const {
        return {samples.data() + i * dim, static_cast<std::size_t>(dim)};
    }
    [[nodiscard]] std::vector<double> coordinate(int i) const;

    /// Moments use batch means over the thinned series (n_batches batches);
    /// quantiles are always reported.
    [[nodiscard]] CoordinateSummary summarize(int i, int n_batches = 20) const;

    /// CSV: idx,x0,... with the schema comment line first.
    void write_csv(std::ostream& os) const;
};

struct InvariantOptions {
    double dt = 0.01;
    double burn_in = -1.0;  // default: 20% of the total horizon
    std::int64_t n_samples = 10000;
    std::int64_t thin = 10;
    std::optional<Scheme> scheme;
    std::vector<double> x0;  // default: origin
    std::uint64_t master_seed = 0;
    std::uint64_t stream_id = 0;
};

/// Total horizon = burn_in + n_samples * thin * dt. With the default burn-in
/// that is n_samples * thin * dt / 0.8.
SampleCloud sample_invariant(const SystemSpec& system, const std::vector<ChannelKind>& kinds,
                             const InvariantOptions& options);

/// Proportion of cloud points inside the closed ball B(center, R).
EnsembleStat ball_mass(const SampleCloud& cloud, std::span<const double> center, double R,
                       std::span<const double> weights = {});

struct BallMassRow {
    double sigma = 0.0;
    double R = 0.0;
    EnsembleStat mass;
};

/// Ball mass across a noise-intensity list; make_cloud builds the cloud for
/// one sigma.
std::vector<BallMassRow> ball_mass_sweep(const std::function<SampleCloud(double)>& make_cloud,
                                         const std::vector<double>& sigmas, std::span<const double> center, double R);

/// CSV: sigma,R,mass,ci_low,ci_high.
void write_sweep_csv(std::ostream& os, const std::vector<BallMassRow>& rows);

/// E|c - X| for X ~ N(0, s^2).
double folded_normal_mean(double c, double s);

/// Time average with batch-means standard error.
EnsembleStat ergodic_average(std::span<const double> series, std::int64_t batch_len);

/// L = (x^2 + y^2 + (z - rho - sigma)^2) / 2.
double lorenz_functional(std::span<const double> x, double rho, double sigma);

/// K = min{sigma, beta/2, 2}.
double lorenz_k(double sigma, double beta);

struct AbsorbingReport {
    double K = 0.0;
    std::int64_t n_steps = 0;
    std::int64_t violations = 0;
    /// Largest lhs - rhs over steps, before the tolerance is added.
    double max_margin = 0.0;
    std::int64_t worst_step = -1;
    double max_L = 0.0;
    double max_O2 = 0.0;
    double tol_constant = 0.0;  // C in tol = C dt^2
    double tol = 0.0;
};

/// Checks L(k+1) <= L(k) + dt [(-K + O(k)^2 / sigma) L(k) + M(k)] + C dt^2 with
/// M = (beta/2)(rho+sigma)^2 + (2/beta)(lambda-beta)^2 O^2. C defaults to
/// 10 (1 + max L)(1 + max O^2).
AbsorbingReport lorenz_absorbing_check(const Trajectory& trajectory, const OUPath& ou, double rho, double sigma,
                                       double beta, double lambda, std::optional<double> tol_constant = {});

}  // namespace rdslab
