#pragma once

// Cocycle construction: integration of a SystemSpec along a stored NoisePath,
// tangent-flow propagation, and Lyapunov spectra.

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rdslab/errors.hpp"
#include "rdslab/noise.hpp"
#include "rdslab/stats.hpp"
#include "rdslab/systems.hpp"

namespace rdslab {

enum class Scheme { euler_maruyama, tamed_euler };

std::string to_string(Scheme s);
Scheme parse_scheme(const std::string& name);

/// Tamed Euler for the cubic and double-well drifts, Euler-Maruyama otherwise.
Scheme default_scheme(const SystemSpec& system);

/// How the tangent frame is advanced over one step.
enum class TangentRule {
    /// Exact derivative of the discrete step map (taming factor included).
    scheme_jacobian,
    /// exp(dt * Db(X_n)): the variational equation with the Jacobian frozen
    /// over the step. Its determinant is exp(dt * trace Db(X_n)) exactly.
    frozen_exponential,
};

std::string to_string(TangentRule r);

/// Solution phi_t(omega, x) on the grid of the driving path.
struct Trajectory {
    TimeGrid grid;
    int dim = 0;
    std::vector<double> states;  // (n_steps + 1) x dim, row-major
    std::string system_name;
    std::uint64_t path_fingerprint = 0;
    Scheme scheme = Scheme::euler_maruyama;

    [[nodiscard]] std::span<const double> state(std::int64_t k) const {
        return {states.data() + k * dim, static_cast<std::size_t>(dim)};
    }
    [[nodiscard]] std::span<const double> final_state() const { return state(grid.n_steps); }

    /// CSV: header t,x0,x1,... one row per grid point, shortest round-trip numbers.
    void write_csv(std::ostream& os) const;
};

/// Allocation-free single-step evaluator for one system and scheme.
class Stepper {
public:
    Stepper(const SystemSpec& system, Scheme scheme, double dt);

    /// out = X_{n+1} given X_n = x at time t and the noise increment dL.
    void advance(double t, std::span<const double> x, std::span<const double> dL, std::span<double> out);

    /// Row-major dim x dim tangent map of one step.
    void tangent(double t, std::span<const double> x, std::span<const double> dL, TangentRule rule,
                 std::span<double> out);

    [[nodiscard]] const SystemSpec& system() const { return *system_; }
    [[nodiscard]] Scheme scheme() const { return scheme_; }
    [[nodiscard]] double dt() const { return dt_; }

private:
    const SystemSpec* system_;
    Scheme scheme_;
    double dt_;
    int d_;
    int m_;
    std::vector<double> b_;
    std::vector<double> jac_;
};

void check_compatible(const SystemSpec& system, std::span<const double> x0, const NoisePath& path);

/// Integrates and calls observe(k, state) at every grid index k = 0..n.
/// Throws BlowUpError carrying the first non-finite index.
template <typename Observer>
std::vector<double> integrate_observed(const SystemSpec& system, std::span<const double> x0,
                                       const NoisePath& path, Scheme scheme, Observer&& observe) {
    check_compatible(system, x0, path);
    const auto& grid = path.grid();
    Stepper stepper(system, scheme, grid.dt);
    std::vector<double> x(x0.begin(), x0.end());
    std::vector<double> next(x.size());
    observe(std::int64_t{0}, std::span<const double>(x));
    for (std::int64_t k = 0; k < grid.n_steps; ++k) {
        stepper.advance(grid.time(k), x, path.increment(k), next);
        for (double v : next) {
            if (!std::isfinite(v)) {
                throw BlowUpError("non-finite state at grid index " + std::to_string(k + 1), k + 1);
            }
        }
        x.swap(next);
        observe(k + 1, std::span<const double>(x));
    }
    return x;
}

/// Full trajectory: X_{n+1} = X_n + b(X_n) dt + Sigma dL_n (Euler-Maruyama) or
/// X_n + b dt / (1 + dt |b|) + Sigma dL_n (tamed). geometric1d uses
/// X_{n+1} = X_n + sigma X_n dW_n.
Trajectory integrate(const SystemSpec& system, std::span<const double> x0, const NoisePath& path,
                     Scheme scheme);

/// Final state only.
std::vector<double> integrate_final(const SystemSpec& system, std::span<const double> x0, const NoisePath& path,
                                    Scheme scheme);

struct LyapunovOptions {
    int k = 1;
    int renorm_every = 10;
    Scheme scheme = Scheme::euler_maruyama;
    TangentRule rule = TangentRule::scheme_jacobian;
    int n_batches = 10;
};

struct LyapunovEstimate {
    int k = 0;
    std::vector<double> exponents;   // descending
    std::vector<double> std_errors;  // batch means, same order as exponents
    double total_time = 0.0;
    int renorm_interval = 0;
    /// Cumulative log|R_jj| after each renormalization, row-major (records x k),
    /// in frame order (not sorted).
    std::vector<double> log_sum_record;
    std::vector<double> record_times;
    bool heavy_tail_warning = false;
    Scheme scheme = Scheme::euler_maruyama;
    TangentRule rule = TangentRule::scheme_jacobian;

    [[nodiscard]] double sum() const;
    [[nodiscard]] double top() const { return exponents.front(); }
};

/// QR (Benettin) estimate of the k leading exponents along one trajectory.
LyapunovEstimate lyapunov_spectrum(const SystemSpec& system, std::span<const double> x0, const NoisePath& path,
                                   const LyapunovOptions& options);

/// Time averages of the volume growth rate along a trajectory.
struct TraceAverage {
    /// (1/T) sum trace Db(X_n) dt. For geometric1d the rate of the linear
    /// cocycle, (sigma dW_n - sigma^2 dt / 2) / dt.
    EnsembleStat generator;
    /// (1/T) sum log|det DF_n| with DF_n the discrete step map's Jacobian.
    EnsembleStat scheme_log_det;
};

TraceAverage trace_average(const SystemSpec& system, const Trajectory& trajectory, const NoisePath& path,
                           int n_batches = 10);

}  // namespace rdslab
