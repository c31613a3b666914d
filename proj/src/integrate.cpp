#include "rdslab/integrate.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace rdslab {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

std::string to_string(Scheme s) {
    return s == Scheme::euler_maruyama ? "euler_maruyama" : "tamed_euler";
}

Scheme parse_scheme(const std::string& name) {
    if (name == "euler_maruyama" || name == "em") {
        return Scheme::euler_maruyama;
    }
    if (name == "tamed_euler" || name == "tamed") {
        return Scheme::tamed_euler;
    }
    throw ConfigurationError(fmt::format("unknown scheme '{}' (euler_maruyama, tamed_euler)", name));
}

Scheme default_scheme(const SystemSpec& system) {
    switch (system.id()) {
        case DriftId::cubic1d:
        case DriftId::doublewell_degenerate:
            return Scheme::tamed_euler;
        default:
            return Scheme::euler_maruyama;
    }
}

std::string to_string(TangentRule r) {
    return r == TangentRule::scheme_jacobian ? "scheme_jacobian" : "frozen_exponential";
}

void Trajectory::write_csv(std::ostream& os) const {
    os << "t";
    for (int i = 0; i < dim; ++i) {
        os << ",x" << i;
    }
    os << '\n';
    for (std::int64_t k = 0; k <= grid.n_steps; ++k) {
        os << fmt::format("{}", grid.time(k));
        for (double v : state(k)) {
            os << fmt::format(",{}", v);
        }
        os << '\n';
    }
}

// ---------------------------------------------------------------- Stepper

Stepper::Stepper(const SystemSpec& system, Scheme scheme, double dt)
    : system_(&system),
      scheme_(scheme),
      dt_(dt),
      d_(system.dim()),
      m_(system.noise_channels()),
      b_(static_cast<std::size_t>(system.dim())),
      jac_(static_cast<std::size_t>(system.dim() * system.dim())) {}

void Stepper::advance(double t, std::span<const double> x, std::span<const double> dL, std::span<double> out) {
    const auto sigma = system_->coupling();
    if (system_->multiplicative()) {
        out[0] = x[0] + sigma[0] * x[0] * dL[0];
        return;
    }
    system_->drift(t, x, b_);
    double factor = dt_;
    if (scheme_ == Scheme::tamed_euler) {
        double n2 = 0.0;
        for (double v : b_) {
            n2 += v * v;
        }
        factor = dt_ / (1.0 + dt_ * std::sqrt(n2));
    }
    for (int i = 0; i < d_; ++i) {
        double noise = 0.0;
        for (int j = 0; j < m_; ++j) {
            noise += sigma[i * m_ + j] * dL[j];
        }
        out[i] = x[i] + factor * b_[i] + noise;
    }
}

void Stepper::tangent(double t, std::span<const double> x, std::span<const double> dL, TangentRule rule,
                      std::span<double> out) {
    if (system_->multiplicative()) {
        const double s = system_->coupling()[0];
        out[0] = rule == TangentRule::scheme_jacobian ? 1.0 + s * dL[0] : std::exp(s * dL[0] - 0.5 * s * s * dt_);
        return;
    }
    system_->jacobian(t, x, jac_);
    if (rule == TangentRule::frozen_exponential) {
        if (d_ == 1) {
            out[0] = std::exp(dt_ * jac_[0]);
            return;
        }
        Eigen::Map<const RowMatrix> a(jac_.data(), d_, d_);
        const RowMatrix e = (dt_ * a).exp();
        std::copy(e.data(), e.data() + d_ * d_, out.begin());
        return;
    }
    if (scheme_ == Scheme::euler_maruyama) {
        for (int i = 0; i < d_; ++i) {
            for (int j = 0; j < d_; ++j) {
                out[i * d_ + j] = (i == j ? 1.0 : 0.0) + dt_ * jac_[i * d_ + j];
            }
        }
        return;
    }
    // Tamed map F(x) = x + dt b / (1 + dt |b|):
    // DF = I + dt [c Db - dt c^2 b (Db^T b)^T / |b|], c = 1 / (1 + dt |b|).
    system_->drift(t, x, b_);
    double nb = 0.0;
    for (double v : b_) {
        nb += v * v;
    }
    nb = std::sqrt(nb);
    const double c = 1.0 / (1.0 + dt_ * nb);
    for (int i = 0; i < d_; ++i) {
        for (int j = 0; j < d_; ++j) {
            out[i * d_ + j] = (i == j ? 1.0 : 0.0) + dt_ * c * jac_[i * d_ + j];
        }
    }
    if (nb > 0.0) {
        for (int j = 0; j < d_; ++j) {
            double g = 0.0;  // (Db^T b)_j / |b| = d|b| / dx_j
            for (int i = 0; i < d_; ++i) {
                g += jac_[i * d_ + j] * b_[i];
            }
            g /= nb;
            for (int i = 0; i < d_; ++i) {
                out[i * d_ + j] -= dt_ * dt_ * c * c * b_[i] * g;
            }
        }
    }
}

// ------------------------------------------------------------ integration

void check_compatible(const SystemSpec& system, std::span<const double> x0, const NoisePath& path) {
    if (static_cast<int>(x0.size()) != system.dim()) {
        throw ParameterError(fmt::format("{}: initial condition has dimension {}, expected {}", system.name(),
                                         x0.size(), system.dim()));
    }
    for (double v : x0) {
        if (!std::isfinite(v)) {
            throw ParameterError("initial condition must be finite");
        }
    }
    if (path.channels() != system.noise_channels()) {
        throw ParameterError(fmt::format("{}: path has {} channels, system couples {}", system.name(),
                                         path.channels(), system.noise_channels()));
    }
    if (system.requires_aux()) {
        if (system.aux() == nullptr) {
            throw StateError(fmt::format("{} needs an auxiliary OU path (with_aux)", system.name()));
        }
        const auto& g = system.aux()->grid;
        if (g.dt != path.grid().dt || path.grid().t_start() < g.t_start() - 1e-12 ||
            path.grid().t_end() > g.t_end() + 1e-9 * std::max(1.0, std::abs(g.t_end()))) {
            throw AlignmentError("auxiliary OU path does not cover the driving path's grid");
        }
    }
}

Trajectory integrate(const SystemSpec& system, std::span<const double> x0, const NoisePath& path, Scheme scheme) {
    Trajectory traj;
    traj.grid = path.grid();
    traj.dim = system.dim();
    traj.system_name = system.name();
    traj.path_fingerprint = path.fingerprint();
    traj.scheme = scheme;
    traj.states.reserve(static_cast<std::size_t>((path.n_steps() + 1) * system.dim()));
    integrate_observed(system, x0, path, scheme, [&](std::int64_t, std::span<const double> x) {
        traj.states.insert(traj.states.end(), x.begin(), x.end());
    });
    return traj;
}

std::vector<double> integrate_final(const SystemSpec& system, std::span<const double> x0, const NoisePath& path,
                                    Scheme scheme) {
    return integrate_observed(system, x0, path, scheme, [](std::int64_t, std::span<const double>) {});
}

// --------------------------------------------------------------- Lyapunov

double LyapunovEstimate::sum() const {
    return std::accumulate(exponents.begin(), exponents.end(), 0.0);
}

LyapunovEstimate lyapunov_spectrum(const SystemSpec& system, std::span<const double> x0, const NoisePath& path,
                                   const LyapunovOptions& options) {
    const int d = system.dim();
    const int k = options.k;
    if (k < 1 || k > d) {
        throw ParameterError(fmt::format("number of exponents {} outside [1, {}]", k, d));
    }
    if (options.renorm_every < 1) {
        throw ParameterError("renormalization interval must be at least 1");
    }
    if (options.n_batches < 2) {
        throw ParameterError("need at least two batches");
    }
    check_compatible(system, x0, path);
    const auto& grid = path.grid();
    if (grid.n_steps < 1) {
        throw ParameterError("Lyapunov estimation needs at least one step");
    }

    Stepper stepper(system, options.scheme, grid.dt);
    std::vector<double> x(x0.begin(), x0.end()), next(x.size());
    std::vector<double> step_map(static_cast<std::size_t>(d * d));
    Eigen::MatrixXd frame = Eigen::MatrixXd::Identity(d, k);
    Eigen::MatrixXd propagated(d, k);
    std::vector<double> cumulative(static_cast<std::size_t>(k), 0.0);

    LyapunovEstimate est;
    est.k = k;
    est.renorm_interval = options.renorm_every;
    est.scheme = options.scheme;
    est.rule = options.rule;

    auto renormalize = [&](std::int64_t step_index) {
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(frame);
        const Eigen::MatrixXd r = qr.matrixQR().topLeftCorner(k, k).triangularView<Eigen::Upper>();
        Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, k);
        for (int j = 0; j < k; ++j) {
            const double rjj = r(j, j);
            if (!std::isfinite(rjj) || std::abs(rjj) < 1e-300) {
                throw DegeneracyError(fmt::format("tangent frame degenerate at step {} (R[{}][{}] = {})",
                                                  step_index, j, j, rjj));
            }
            // Positive diagonal convention.
            if (rjj < 0.0) {
                q.col(j) = -q.col(j);
            }
            cumulative[j] += std::log(std::abs(rjj));
        }
        frame = q;
        est.log_sum_record.insert(est.log_sum_record.end(), cumulative.begin(), cumulative.end());
        est.record_times.push_back(grid.time(step_index) - grid.t_start());
    };

    for (std::int64_t n = 0; n < grid.n_steps; ++n) {
        const double t = grid.time(n);
        const auto dL = path.increment(n);
        stepper.tangent(t, x, dL, options.rule, step_map);
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(step_map.data(),
                                                                                                  d, d);
        propagated.noalias() = m * frame;
        frame.swap(propagated);
        stepper.advance(t, x, dL, next);
        for (double v : next) {
            if (!std::isfinite(v)) {
                throw BlowUpError(fmt::format("non-finite state at grid index {}", n + 1), n + 1);
            }
        }
        x.swap(next);
        if ((n + 1) % options.renorm_every == 0 || n + 1 == grid.n_steps) {
            renormalize(n + 1);
        }
    }

    est.total_time = grid.t_end() - grid.t_start();
    std::vector<double> exps(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
        exps[j] = cumulative[j] / est.total_time;
    }

    // Batch means over contiguous groups of renormalization records.
    const auto records = static_cast<int>(est.record_times.size());
    const int nb = std::min(options.n_batches, records);
    std::vector<double> errs(static_cast<std::size_t>(k), 0.0);
    if (nb >= 2) {
        std::vector<std::vector<double>> batch(static_cast<std::size_t>(k));
        for (int b = 0; b < nb; ++b) {
            const int lo = b * records / nb;        // first record (exclusive start)
            const int hi = (b + 1) * records / nb;  // last record
            const double t0 = lo == 0 ? 0.0 : est.record_times[lo - 1];
            const double t1 = est.record_times[hi - 1];
            for (int j = 0; j < k; ++j) {
                const double s0 = lo == 0 ? 0.0 : est.log_sum_record[(lo - 1) * k + j];
                const double s1 = est.log_sum_record[(hi - 1) * k + j];
                batch[j].push_back((s1 - s0) / (t1 - t0));
            }
        }
        for (int j = 0; j < k; ++j) {
            const auto& v = batch[j];
            const double mean = std::accumulate(v.begin(), v.end(), 0.0) / nb;
            double ss = 0.0;
            for (double e : v) {
                ss += (e - mean) * (e - mean);
            }
            errs[j] = std::sqrt(ss / (nb - 1) / nb);
            // Leave-one-out disagreement check.
            for (int b = 0; b < nb && nb >= 3; ++b) {
                const double m_others = (mean * nb - v[b]) / (nb - 1);
                double ss_o = 0.0;
                for (int c = 0; c < nb; ++c) {
                    if (c != b) {
                        ss_o += (v[c] - m_others) * (v[c] - m_others);
                    }
                }
                const double sd_o = std::sqrt(ss_o / (nb - 2));
                if (sd_o > 0.0 && std::abs(v[b] - m_others) > 5.0 * sd_o) {
                    est.heavy_tail_warning = true;
                }
            }
        }
    }

    std::vector<int> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return exps[a] > exps[b]; });
    for (int j : order) {
        est.exponents.push_back(exps[j]);
        est.std_errors.push_back(errs[j]);
    }
    return est;
}

TraceAverage trace_average(const SystemSpec& system, const Trajectory& trajectory, const NoisePath& path,
                           int n_batches) {
    const auto& grid = trajectory.grid;
    if (!(grid == path.grid()) || trajectory.path_fingerprint != path.fingerprint()) {
        throw AlignmentError("trajectory was not produced by this path");
    }
    if (trajectory.dim != system.dim()) {
        throw ParameterError("trajectory dimension does not match the system");
    }
    const int d = system.dim();
    Stepper stepper(system, trajectory.scheme, grid.dt);
    std::vector<double> gen(static_cast<std::size_t>(grid.n_steps));
    std::vector<double> logdet(static_cast<std::size_t>(grid.n_steps));
    std::vector<double> step_map(static_cast<std::size_t>(d * d));
    const double dt = grid.dt;
    for (std::int64_t n = 0; n < grid.n_steps; ++n) {
        const double t = grid.time(n);
        const auto x = trajectory.state(n);
        const auto dL = path.increment(n);
        if (system.multiplicative()) {
            const double s = system.coupling()[0];
            gen[n] = (s * dL[0] - 0.5 * s * s * dt) / dt;
        } else {
            gen[n] = system.jacobian_trace(t, x);
        }
        stepper.tangent(t, x, dL, TangentRule::scheme_jacobian, step_map);
        double det = 0.0;
        if (d == 1) {
            det = step_map[0];
        } else {
            Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
                step_map.data(), d, d);
            det = m.partialPivLu().determinant();
        }
        logdet[n] = std::log(std::abs(det)) / dt;
    }
    TraceAverage out;
    out.generator = batch_means_count(gen, n_batches, "trace_average");
    out.scheme_log_det = batch_means_count(logdet, n_batches, "scheme_log_det_average");
    return out;
}

}  // namespace rdslab
