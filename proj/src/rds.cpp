#include "rdslab/rds.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "rdslab/errors.hpp"
#include "rdslab/metric.hpp"
#include "rdslab/parallel.hpp"

namespace rdslab {

namespace {

constexpr double kTubeCap = 1e8;

std::uint32_t replica_stream(const EnsembleConfig& config, std::int64_t r) {
    const std::uint64_t id = config.first_stream + static_cast<std::uint64_t>(r);
    if (id > 0xFFFFFFFFull) {
        throw ParameterError(fmt::format("stream id {} does not fit in 32 bits", id));
    }
    return static_cast<std::uint32_t>(id);
}

void check_point(const SystemSpec& system, std::span<const double> x, const char* what) {
    if (static_cast<int>(x.size()) != system.dim()) {
        throw ParameterError(fmt::format("{} has dimension {}, system {} has {}", what, x.size(), system.name(),
                                         system.dim()));
    }
    for (double v : x) {
        if (!std::isfinite(v)) {
            throw ParameterError(fmt::format("{} must be finite", what));
        }
    }
}

void check_weights(std::span<const double> w, int dim) {
    if (w.empty()) {
        return;
    }
    if (static_cast<int>(w.size()) != dim) {
        throw ParameterError(fmt::format("metric weights have length {}, expected {}", w.size(), dim));
    }
    for (double v : w) {
        if (!(v > 0.0) || !std::isfinite(v)) {
            throw ParameterError("metric weights must be positive and finite");
        }
    }
}

std::vector<std::int64_t> time_indices(const TimeGrid& grid, const std::vector<double>& t_list) {
    std::vector<std::int64_t> idx;
    idx.reserve(t_list.size());
    for (double t : t_list) {
        if (t < 0.0) {
            throw ParameterError(fmt::format("time {} is negative", t));
        }
        const std::int64_t k = t == 0.0 ? 0 : steps_in(t, grid.dt);
        if (k > grid.n_steps) {
            throw ParameterError(fmt::format("time {} exceeds the path horizon {}", t, grid.t_end() - grid.t_start()));
        }
        if (!idx.empty() && k <= idx.back()) {
            throw ParameterError("time list must be strictly increasing");
        }
        idx.push_back(k);
    }
    return idx;
}

double horizon_of(const std::vector<double>& t_list) {
    if (t_list.empty()) {
        throw ParameterError("time list is empty");
    }
    return t_list.back();
}

template <int N>
double top_eigenvalue_fixed(const double* p) {
    using M = Eigen::Matrix<double, N, N, Eigen::RowMajor>;
    const Eigen::Map<const M> m(p);
    const Eigen::Matrix<double, N, N> g = m.transpose() * m;
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, N, N>> es;
    es.computeDirect(g, Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff() + 1e-10 * N * g.cwiseAbs().maxCoeff();
}

/// Spectral norm of the row-major d x d matrix p, padded for rounding.
double spectral_bound(const std::vector<double>& p, int d) {
    double top = 0.0;
    switch (d) {
        case 1:
            return std::abs(p[0]);
        case 2:
            top = top_eigenvalue_fixed<2>(p.data());
            break;
        case 3:
            top = top_eigenvalue_fixed<3>(p.data());
            break;
        default: {
            using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
            const Eigen::Map<const RowMatrix> m(p.data(), d, d);
            const Eigen::MatrixXd g = m.transpose() * m;
            top = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(g, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff() +
                  1e-12 * d * g.cwiseAbs().maxCoeff();
        }
    }
    return std::sqrt(std::max(top, 0.0));
}

struct Mesh {
    std::vector<double> offsets;  // n x d, scaled coordinates relative to the center
    std::int64_t n = 0;
    double covering = 0.0;
};

Mesh build_mesh(std::span<const double> z, double R, double h, std::int64_t budget) {
    const int d = static_cast<int>(z.size());
    Mesh mesh;
    mesh.covering = 0.5 * h * std::sqrt(static_cast<double>(d));
    const double reach = R + mesh.covering;
    const auto half = static_cast<std::int64_t>(std::floor(reach / h));
    const double side = static_cast<double>(2 * half + 1);
    if (std::pow(side, d) > 64.0 * static_cast<double>(budget)) {
        throw BudgetError(fmt::format("mesh with spacing {} over radius {} exceeds the budget of {} points", h, R,
                                      budget));
    }
    std::vector<std::int64_t> k(static_cast<std::size_t>(d), -half);
    std::vector<double> g(static_cast<std::size_t>(d));
    for (;;) {
        double n2 = 0.0;
        for (int i = 0; i < d; ++i) {
            g[i] = h * static_cast<double>(k[i]);
            n2 += g[i] * g[i];
        }
        if (std::sqrt(n2) <= reach) {
            if (++mesh.n > budget) {
                throw BudgetError(fmt::format("mesh with spacing {} over radius {} exceeds the budget of {} points", h,
                                              R, budget));
            }
            mesh.offsets.insert(mesh.offsets.end(), g.begin(), g.end());
        }
        int i = 0;
        while (i < d && k[i] == half) {
            k[i] = -half;
            ++i;
        }
        if (i == d) {
            break;
        }
        ++k[i];
    }
    return mesh;
}

/// Bound on the weighted operator norm of one step map over the tube of
/// radius r around x.
class GrowthBound {
public:
    GrowthBound(const SystemSpec& system, Scheme scheme, double dt, std::span<const double> w)
        : system_(system),
          scheme_(scheme),
          dt_(dt),
          d_(system.dim()),
          sw_(static_cast<std::size_t>(d_), 1.0),
          jac_(static_cast<std::size_t>(d_ * d_)),
          var_(static_cast<std::size_t>(d_ * d_)),
          p_(static_cast<std::size_t>(d_ * d_)),
          delta_(static_cast<std::size_t>(d_)) {
        double wmin = std::numeric_limits<double>::infinity();
        double wmax = 0.0;
        for (int i = 0; i < d_; ++i) {
            const double wi = w.empty() ? 1.0 : w[i];
            wv_.push_back(wi);
            sw_[i] = std::sqrt(wi);
            wmin = std::min(wmin, wi);
            wmax = std::max(wmax, wi);
        }
        kappa_ = wmax / wmin;
        quad_ = system.quadratic_remainder(wv_);
    }

    double factor(double t, std::span<const double> x, std::span<const double> dL, double r) {
        if (system_.multiplicative()) {
            return std::abs(1.0 + system_.coupling()[0] * dL[0]);
        }
        system_.jacobian(t, x, jac_);
        if (scheme_ == Scheme::euler_maruyama && quad_) {
            // |(I + dt J) e + dt q(e)|^2 expanded, with <q(e), e> bounded separately
            for (int i = 0; i < d_; ++i) {
                for (int j = 0; j < d_; ++j) {
                    p_[i * d_ + j] = jac_[i * d_ + j] * sw_[i] / sw_[j];
                }
            }
            double nj = 0.0;
            for (double v : p_) {
                nj += v * v;
            }
            nj = std::sqrt(nj);
            for (int i = 0; i < d_; ++i) {
                p_[i * d_ + i] = 1.0 / dt_ + p_[i * d_ + i];
            }
            const double n = dt_ * spectral_bound(p_, d_);
            const double qn = quad_->norm * r;
            const double sq = n * n + 2.0 * dt_ * quad_->inner * r + 2.0 * dt_ * dt_ * nj * qn + dt_ * dt_ * qn * qn;
            return std::sqrt(std::max(sq, 0.0)) * (1.0 + 1e-15);
        }
        for (int i = 0; i < d_; ++i) {
            delta_[i] = r / sw_[i];
        }
        system_.jacobian_variation_bound(x, delta_, var_);
        for (int i = 0; i < d_; ++i) {
            for (int j = 0; j < d_; ++j) {
                p_[i * d_ + j] = var_[i * d_ + j] * sw_[i] / sw_[j];
            }
        }
        const double vf = spectral_bound(p_, d_);
        if (scheme_ == Scheme::euler_maruyama) {
            for (int i = 0; i < d_; ++i) {
                for (int j = 0; j < d_; ++j) {
                    p_[i * d_ + j] = ((i == j ? 1.0 : 0.0) + dt_ * jac_[i * d_ + j]) * sw_[i] / sw_[j];
                }
            }
            return spectral_bound(p_, d_) + dt_ * vf;
        }
        // Tamed step: |DF - I|_w <= dt (1 + kappa) sup |Db|_w over the tube.
        for (int i = 0; i < d_; ++i) {
            for (int j = 0; j < d_; ++j) {
                p_[i * d_ + j] = jac_[i * d_ + j] * sw_[i] / sw_[j];
            }
        }
        return 1.0 + dt_ * (1.0 + kappa_) * (spectral_bound(p_, d_) + vf);
    }

private:
    const SystemSpec& system_;
    Scheme scheme_;
    double dt_;
    int d_;
    double kappa_ = 1.0;
    std::optional<SystemSpec::QuadraticRemainder> quad_;
    std::vector<double> wv_, sw_, jac_, var_, p_, delta_;
};

void check_constant_mode(const SystemSpec& system, const CertifyOptions& o, std::span<const double> w) {
    if (system.multiplicative()) {
        throw PreconditionError("constant growth mode needs additive noise; use adaptive mode");
    }
    if (!o.verified) {
        throw PreconditionError(
            fmt::format("growth rate {} is unverified: pass a one-sided Lipschitz report", o.lambda_growth));
    }
    const auto& rep = *o.verified;
    if (!rep.pass || rep.condition.kind != DriftCondition::Kind::one_sided_lipschitz) {
        throw PreconditionError(fmt::format("drift-condition report does not verify a one-sided Lipschitz bound ({})",
                                            rep.condition.describe()));
    }
    if (std::abs(rep.condition.lambda - o.lambda_growth) > 1e-12 * std::max(1.0, std::abs(o.lambda_growth))) {
        throw PreconditionError(fmt::format("growth rate {} differs from the verified constant {}", o.lambda_growth,
                                            rep.condition.lambda));
    }
    if (rep.system_name != system.name()) {
        throw PreconditionError(fmt::format("report verifies {}, not {}", rep.system_name, system.name()));
    }
    const int d = system.dim();
    for (int i = 0; i < d; ++i) {
        const double a = w.empty() ? 1.0 : w[i];
        const double b = rep.weights.empty() ? 1.0 : rep.weights[i];
        if (a != b) {
            throw PreconditionError("report was verified in a different metric");
        }
    }
}

}  // namespace

SystemSpec bind_path(const SystemSpec& system, const NoisePath& path) {
    if (!system.requires_aux()) {
        return system;
    }
    return system.with_aux(ou_from_path(path, 0, system.param("lambda"), system.param("gamma")));
}

double diameter(const std::vector<std::vector<double>>& points, std::span<const double> weights) {
    double best = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        for (std::size_t j = i + 1; j < points.size(); ++j) {
            best = std::max(best, weighted_distance(points[i], points[j], weights));
        }
    }
    return best;
}

std::vector<double> uniform_in_ball(std::span<const double> center, double radius, rng::Cursor& cursor) {
    const std::size_t d = center.size();
    std::vector<double> x(d);
    double n2 = 0.0;
    do {
        n2 = 0.0;
        for (auto& v : x) {
            v = cursor.normal();
            n2 += v * v;
        }
    } while (n2 == 0.0);
    const double scale = radius * std::pow(cursor.uniform(), 1.0 / static_cast<double>(d)) / std::sqrt(n2);
    for (std::size_t i = 0; i < d; ++i) {
        x[i] = center[i] + scale * x[i];
    }
    return x;
}

// ------------------------------------------------------------- two-point

DistanceSeries two_point_run(const SystemSpec& system, std::span<const double> x, std::span<const double> y,
                             const NoisePath& path, Scheme scheme, std::span<const double> weights) {
    check_point(system, x, "x");
    check_point(system, y, "y");
    check_weights(weights, system.dim());
    const SystemSpec bound = bind_path(system, path);
    const Trajectory a = integrate(bound, x, path, scheme);
    const Trajectory b = integrate(bound, y, path, scheme);
    DistanceSeries out;
    out.grid = path.grid();
    out.path_fingerprint = path.fingerprint();
    out.distance.resize(static_cast<std::size_t>(path.n_steps() + 1));
    for (std::int64_t k = 0; k <= path.n_steps(); ++k) {
        out.distance[k] = weighted_distance(a.state(k), b.state(k), weights);
    }
    return out;
}

SyncResult sync_probability(const SystemSpec& system, const PairSource& pairs, double t, double eta,
                            std::int64_t n_reps, const EnsembleConfig& config, std::span<const double> weights) {
    if (!(eta > 0.0)) {
        throw ParameterError("eta must be positive");
    }
    if (n_reps < 1) {
        throw ParameterError("need at least one replica");
    }
    if (pairs.kind == PairSource::Kind::fixed) {
        check_point(system, pairs.x, "x");
        check_point(system, pairs.y, "y");
    } else {
        check_point(system, pairs.center, "pair center");
        if (!(pairs.radius > 0.0)) {
            throw ParameterError("pair radius must be positive");
        }
    }
    check_weights(weights, system.dim());
    const TimeGrid grid = TimeGrid::over(0.0, t, config.dt);
    const Scheme scheme = config.scheme_for(system);

    SyncResult out;
    out.attempted = n_reps;
    out.final_distance.assign(static_cast<std::size_t>(n_reps), 0.0);
    parallel_for(n_reps, config.workers, [&](std::int64_t r) {
        const std::uint32_t stream = replica_stream(config, r);
        std::vector<double> x = pairs.x;
        std::vector<double> y = pairs.y;
        if (pairs.kind == PairSource::Kind::uniform_ball) {
            rng::Cursor cursor(rng::Stream(config.master_seed, stream, rng::substream(0, rng::Purpose::pair_sample)));
            x = uniform_in_ball(pairs.center, pairs.radius, cursor);
            y = uniform_in_ball(pairs.center, pairs.radius, cursor);
        }
        const NoisePath path = sample_path(config.kinds, grid, config.master_seed, stream);
        const SystemSpec bound = bind_path(system, path);
        try {
            const auto fx = integrate_final(bound, x, path, scheme);
            const auto fy = integrate_final(bound, y, path, scheme);
            out.final_distance[r] = weighted_distance(fx, fy, weights);
        } catch (const BlowUpError&) {
            out.final_distance[r] = std::numeric_limits<double>::quiet_NaN();
        }
    });
    std::int64_t hits = 0;
    for (double dist : out.final_distance) {
        if (std::isnan(dist)) {
            ++out.blowups;
        } else if (dist <= eta) {
            ++hits;
        }
    }
    if (out.blowups == n_reps) {
        throw BlowUpError(fmt::format("all {} replicas blew up; reduce dt or use the tamed scheme", n_reps), -1);
    }
    out.proportion = proportion_stat(hits, n_reps - out.blowups, fmt::format("P(d(t={}) <= {})", t, eta));
    return out;
}

PullbackResult pullback_diameter(const SystemSpec& system, const std::vector<std::vector<double>>& points,
                                 const std::vector<double>& t_list, std::int64_t n_reps,
                                 const EnsembleConfig& config, std::span<const double> weights) {
    if (points.empty()) {
        throw ParameterError("pullback needs at least one point");
    }
    for (const auto& p : points) {
        check_point(system, p, "point");
    }
    check_weights(weights, system.dim());
    const double t_max = horizon_of(t_list);
    const Scheme scheme = config.scheme_for(system);
    PullbackResult out;
    out.t_list = t_list;
    out.diameter.assign(static_cast<std::size_t>(n_reps), std::vector<double>(t_list.size(), 0.0));
    out.path_fingerprint.assign(static_cast<std::size_t>(n_reps), 0);
    parallel_for(n_reps, config.workers, [&](std::int64_t r) {
        const NoisePath full =
            sample_two_sided(config.kinds, t_max, 0.0, config.dt, config.master_seed, replica_stream(config, r));
        out.path_fingerprint[r] = full.fingerprint();
        const auto idx = time_indices(full.grid(), t_list);
        const std::int64_t pin = full.pin_index();
        std::vector<std::vector<double>> images(points.size());
        for (std::size_t j = 0; j < t_list.size(); ++j) {
            const NoisePath seg = full.slice(pin - idx[j], idx[j]);
            const SystemSpec bound = bind_path(system, seg);
            for (std::size_t p = 0; p < points.size(); ++p) {
                images[p] = integrate_final(bound, points[p], seg, scheme);
            }
            out.diameter[r][j] = diameter(images, weights);
        }
    });
    return out;
}

// ---------------------------------------------------------- certification

std::string to_string(GrowthMode m) {
    return m == GrowthMode::constant ? "constant" : "adaptive";
}

std::int64_t mesh_size(int dim, double R, double h) {
    if (!(R > 0.0) || !(h > 0.0) || dim < 1) {
        throw ParameterError("mesh needs R > 0, h > 0 and dim >= 1");
    }
    const std::vector<double> z(static_cast<std::size_t>(dim), 0.0);
    return build_mesh(z, R, h, std::numeric_limits<std::int64_t>::max() / 128).n;
}

std::vector<BallImageCertificate> certify_ball_image_times(const SystemSpec& system, std::span<const double> z,
                                                           double R, const NoisePath& path,
                                                           const std::vector<double>& t_list,
                                                           const CertifyOptions& options) {
    const int d = system.dim();
    check_point(system, z, "ball center");
    if (!(R > 0.0) || !std::isfinite(R)) {
        throw ParameterError("ball radius must be positive");
    }
    if (!(options.h > 0.0)) {
        throw ParameterError("mesh spacing must be positive");
    }
    const std::vector<double> w =
        options.weights.empty() ? std::vector<double>(static_cast<std::size_t>(d), 1.0) : options.weights;
    check_weights(w, d);
    const std::vector<double> target = options.target_center.empty()
                                           ? std::vector<double>(z.begin(), z.end())
                                           : options.target_center;
    check_point(system, target, "target center");
    const double target_radius = options.target_radius > 0.0 ? options.target_radius : 0.5 * R;
    if (options.mode == GrowthMode::constant) {
        check_constant_mode(system, options, w);
    }
    const auto idx = time_indices(path.grid(), t_list);
    const Scheme scheme = options.scheme ? *options.scheme : default_scheme(system);
    const SystemSpec bound = bind_path(system, path);
    check_compatible(bound, z, path);
    const auto& grid = path.grid();
    const double dt = grid.dt;

    std::vector<BallImageCertificate> certs(t_list.size());
    for (std::size_t j = 0; j < t_list.size(); ++j) {
        auto& c = certs[j];
        c.center.assign(z.begin(), z.end());
        c.radius = R;
        c.target_center = target;
        c.target_radius = target_radius;
        c.t = t_list[j];
        c.mode = options.mode;
        c.lambda_growth = options.lambda_growth;
        c.weights = w;
        c.h = options.h;
    }
    auto finish = [&](std::vector<double>& worst, std::vector<double>& tube, std::vector<double>& reach) {
        for (std::size_t j = 0; j < certs.size(); ++j) {
            auto& c = certs[j];
            c.worst_distance = worst[j];
            c.tube_radius = tube[j];
            c.slack = target_radius - reach[j];
            c.certified = std::isfinite(c.slack) && c.slack >= 0.0;
        }
    };

    Stepper stepper(bound, scheme, dt);

    // 1D order-preserving steps: the image of an interval is the interval
    // spanned by the endpoint images.
    if (d == 1 && options.monotone_shortcut && bound.concave_derivative_1d()) {
        const double half = R / std::sqrt(w[0]);
        double lo = z[0] - half, hi = z[0] + half, nlo = 0.0, nhi = 0.0;
        bool monotone = true;
        std::vector<double> worst(t_list.size()), tube(t_list.size(), 0.0), reach(t_list.size());
        std::size_t next = 0;
        auto record = [&](std::int64_t k) {
            while (next < idx.size() && idx[next] == k) {
                worst[next] = std::sqrt(w[0]) * std::max(std::abs(lo - target[0]), std::abs(hi - target[0]));
                reach[next] = worst[next];
                ++next;
            }
        };
        record(0);
        for (std::int64_t k = 0; k < idx.back() && monotone; ++k) {
            const double t = grid.time(k);
            const auto dL = path.increment(k);
            double slope = 0.0;
            if (bound.multiplicative()) {
                slope = 1.0 + bound.coupling()[0] * dL[0];
            } else {
                const double dlo = bound.jacobian(t, std::span<const double>(&lo, 1))[0];
                const double dhi = bound.jacobian(t, std::span<const double>(&hi, 1))[0];
                slope = 1.0 + dt * std::min({dlo, dhi, 0.0});
            }
            if (!(slope > 0.0)) {
                monotone = false;
                break;
            }
            stepper.advance(t, std::span<const double>(&lo, 1), dL, std::span<double>(&nlo, 1));
            stepper.advance(t, std::span<const double>(&hi, 1), dL, std::span<double>(&nhi, 1));
            if (!std::isfinite(nlo) || !std::isfinite(nhi)) {
                throw BlowUpError(fmt::format("non-finite endpoint image at grid index {}", k + 1), k + 1);
            }
            lo = nlo;
            hi = nhi;
            record(k + 1);
        }
        if (monotone) {
            finish(worst, tube, reach);
            for (auto& c : certs) {
                c.monotone = true;
                c.n_mesh = 2;
                c.note = "monotone endpoints";
            }
            return certs;
        }
    }

    const Mesh mesh = build_mesh(z, R, options.h, options.budget);
    std::vector<double> worst(t_list.size(), 0.0), tube(t_list.size(), 0.0), reach(t_list.size(), 0.0);
    std::vector<double> cw(t_list.size()), ct(t_list.size());
    std::vector<double> x(static_cast<std::size_t>(d)), nx(static_cast<std::size_t>(d));
    std::vector<double> sw(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
        sw[i] = std::sqrt(w[i]);
    }
    GrowthBound growth(bound, scheme, dt, w);

    const bool check_region = options.mode == GrowthMode::constant && !options.verified->state_independent;
    double wmin = *std::min_element(w.begin(), w.end());
    bool left_region = false;
    auto in_region = [&](std::span<const double> s, double r) {
        const auto& reg = options.verified->region;
        return euclidean_distance(s, reg.center) + r / std::sqrt(wmin) <= reg.radius;
    };

    // Propagates the center of a cell with covering radius r0; fills cw/ct.
    auto propagate = [&](std::span<const double> offset, double r0) {
        for (int i = 0; i < d; ++i) {
            x[i] = z[i] + offset[i] / sw[i];
        }
        double r = r0;
        std::size_t next = 0;
        auto tube_at = [&](std::int64_t k) {
            return options.mode == GrowthMode::constant ? r0 * std::exp(options.lambda_growth * (grid.time(k) - grid.t_start()))
                                                        : r;
        };
        auto record = [&](std::int64_t k) {
            while (next < idx.size() && idx[next] == k) {
                cw[next] = weighted_distance(x, target, w);
                ct[next] = tube_at(k);
                ++next;
            }
        };
        if (check_region && !in_region(x, tube_at(0))) {
            left_region = true;
        }
        record(0);
        for (std::int64_t k = 0; k < idx.back(); ++k) {
            const double t = grid.time(k);
            const auto dL = path.increment(k);
            if (options.mode == GrowthMode::adaptive && r <= kTubeCap) {
                r *= growth.factor(t, x, dL, r);
            }
            stepper.advance(t, x, dL, nx);
            for (double v : nx) {
                if (!std::isfinite(v)) {
                    throw BlowUpError(fmt::format("non-finite mesh image at grid index {}", k + 1), k + 1);
                }
            }
            x.swap(nx);
            if (check_region && !left_region && !in_region(x, tube_at(k + 1))) {
                left_region = true;
            }
            if (r > kTubeCap) {
                r = std::numeric_limits<double>::infinity();
            }
            record(k + 1);
        }
    };

    struct Cell {
        std::vector<double> offset;
        double side = 0.0;
        int depth = 0;
    };
    std::vector<Cell> pending;
    pending.reserve(static_cast<std::size_t>(mesh.n));
    for (std::int64_t p = mesh.n; p-- > 0;) {
        pending.push_back({std::vector<double>(mesh.offsets.begin() + p * d, mesh.offsets.begin() + (p + 1) * d),
                           options.h, 0});
    }
    const double cover = 0.5 * std::sqrt(static_cast<double>(d));
    std::int64_t n_cells = mesh.n;
    bool exhausted = false;
    while (!pending.empty()) {
        Cell cell = std::move(pending.back());
        pending.pop_back();
        propagate(cell.offset, cover * cell.side);
        const std::size_t last = idx.size() - 1;
        const bool fails = !(cw[last] + ct[last] <= target_radius);
        if (fails && cell.depth < options.refine_depth) {
            const double half = 0.5 * cell.side;
            std::vector<Cell> children;
            for (int mask = 0; mask < (1 << d); ++mask) {
                Cell child{cell.offset, half, cell.depth + 1};
                double n2 = 0.0;
                for (int i = 0; i < d; ++i) {
                    child.offset[i] += ((mask >> i) & 1 ? 0.5 : -0.5) * half;
                    n2 += child.offset[i] * child.offset[i];
                }
                if (std::sqrt(n2) <= R + cover * half) {
                    children.push_back(std::move(child));
                }
            }
            if (n_cells + static_cast<std::int64_t>(children.size()) <= options.budget) {
                n_cells += static_cast<std::int64_t>(children.size());
                for (auto& c : children) {
                    pending.push_back(std::move(c));
                }
                continue;
            }
            exhausted = true;
        }
        for (std::size_t j = 0; j < idx.size(); ++j) {
            worst[j] = std::max(worst[j], cw[j]);
            tube[j] = std::max(tube[j], ct[j]);
            reach[j] = std::max(reach[j], cw[j] + ct[j]);
        }
    }
    finish(worst, tube, reach);
    for (auto& c : certs) {
        c.n_mesh = n_cells;
        if (options.mode == GrowthMode::adaptive && c.t > 0.0 && std::isfinite(c.tube_radius)) {
            c.lambda_growth = std::log(c.tube_radius / (cover * options.h)) / c.t;
        }
        if (exhausted) {
            c.note = "refinement stopped at the mesh budget";
        }
        if (left_region) {
            c.certified = false;
            c.note = "trajectory tube left the verified region";
        }
    }
    return certs;
}

BallImageCertificate certify_ball_image(const SystemSpec& system, std::span<const double> z, double R,
                                        const NoisePath& path, double t, const CertifyOptions& options) {
    return certify_ball_image_times(system, z, R, path, {t}, options).front();
}

RecurrenceResult recurrence_probability(const SystemSpec& system, std::span<const double> z, double R,
                                        const std::vector<double>& t_list, std::int64_t n_reps,
                                        const CertifyOptions& options, const EnsembleConfig& config) {
    if (n_reps < 1) {
        throw ParameterError("need at least one replica");
    }
    const TimeGrid grid = TimeGrid::over(0.0, horizon_of(t_list), config.dt);
    CertifyOptions o = options;
    if (!o.scheme) {
        o.scheme = config.scheme_for(system);
    }
    std::vector<std::vector<char>> granted(static_cast<std::size_t>(n_reps));
    std::vector<char> blown(static_cast<std::size_t>(n_reps), 0);
    std::vector<std::int64_t> n_mesh(static_cast<std::size_t>(n_reps), 0);
    std::vector<char> monotone(static_cast<std::size_t>(n_reps), 0);
    parallel_for(n_reps, config.workers, [&](std::int64_t r) {
        const NoisePath path = sample_path(config.kinds, grid, config.master_seed, replica_stream(config, r));
        try {
            const auto certs = certify_ball_image_times(system, z, R, path, t_list, o);
            granted[r].reserve(certs.size());
            for (const auto& c : certs) {
                granted[r].push_back(c.certified ? 1 : 0);
            }
            n_mesh[r] = certs.front().n_mesh;
            monotone[r] = certs.front().monotone ? 1 : 0;
        } catch (const BlowUpError&) {
            blown[r] = 1;
        }
    });
    RecurrenceResult out;
    out.t_list = t_list;
    out.attempted = n_reps;
    for (std::int64_t r = 0; r < n_reps; ++r) {
        if (blown[r]) {
            ++out.blowups;
        } else {
            out.n_mesh = std::max(out.n_mesh, n_mesh[r]);
            out.monotone = out.monotone || monotone[r];
        }
    }
    if (out.blowups == n_reps) {
        throw BlowUpError(fmt::format("all {} replicas blew up; reduce dt or use the tamed scheme", n_reps), -1);
    }
    for (std::size_t j = 0; j < t_list.size(); ++j) {
        std::int64_t hits = 0;
        for (std::int64_t r = 0; r < n_reps; ++r) {
            if (!blown[r] && granted[r][j]) {
                ++hits;
            }
        }
        out.per_t.push_back(proportion_stat(hits, n_reps - out.blowups,
                                            fmt::format("P(phi_{}(B(z,{})) in target)", t_list[j], R)));
        if (out.per_t.back().ci_low > out.per_t[out.best].ci_low ||
            (out.per_t.back().ci_low == out.per_t[out.best].ci_low && out.per_t.back().mean > out.per_t[out.best].mean)) {
            out.best = j;
        }
    }
    return out;
}

// ----------------------------------------------------------------- verdict

std::string to_string(Verdict v) {
    switch (v) {
        case Verdict::evidence_for:
            return "evidence-for-synchronization";
        case Verdict::evidence_against:
            return "evidence-against";
        default:
            return "inconclusive";
    }
}

VerdictReport synchronization_verdict(const SystemSpec& system, std::span<const double> z, double eps,
                                      const VerdictOptions& options, const EnsembleConfig& config) {
    check_point(system, z, "z");
    if (!(eps > 0.0)) {
        throw ParameterError("eps must be positive");
    }
    VerdictReport rep;
    const Scheme scheme = config.scheme_for(system);
    const std::int64_t n = options.n_reps;

    // (a) diameter decay of B(z, eps) samples along one forward path.
    {
        const double t_max = horizon_of(options.decay_times);
        const TimeGrid grid = TimeGrid::over(0.0, t_max, config.dt);
        std::vector<int> outcome(static_cast<std::size_t>(n), 0);  // 1 success, 0 fail, -1 blow-up
        parallel_for(n, config.workers, [&](std::int64_t r) {
            const std::uint32_t stream = replica_stream(config, r);
            rng::Cursor cursor(rng::Stream(config.master_seed, stream, rng::substream(1, rng::Purpose::pair_sample)));
            std::vector<std::vector<double>> pts{std::vector<double>(z.begin(), z.end())};
            for (int i = 1; i < options.ball_samples; ++i) {
                pts.push_back(uniform_in_ball(z, eps, cursor));
            }
            const NoisePath path = sample_path(config.kinds, grid, config.master_seed, stream);
            const SystemSpec bound = bind_path(system, path);
            try {
                for (auto& p : pts) {
                    p = integrate_final(bound, p, path, scheme);
                }
                outcome[r] = diameter(pts, options.certify.weights) <= options.diameter_tolerance ? 1 : 0;
            } catch (const BlowUpError&) {
                outcome[r] = -1;
            }
        });
        std::int64_t hits = 0, ok = 0;
        for (int o : outcome) {
            ok += o >= 0;
            hits += o == 1;
            rep.blowups += o < 0;
        }
        if (ok == 0) {
            throw BlowUpError("every diameter-decay replica blew up", -1);
        }
        rep.diameter_decay = proportion_stat(hits, ok, fmt::format("P(diam(B(z,{}) at t={}) <= {})", eps, t_max,
                                                                   options.diameter_tolerance));
    }

    // (b) recurrence, scanning R then t; stops at the first positive lower bound.
    {
        bool found = false;
        std::string scanned;
        for (double R : options.r_grid) {
            CertifyOptions co = options.certify;
            co.h = options.h_fraction * R;
            co.target_radius = 0.0;
            const auto res = recurrence_probability(system, z, R, options.t_grid, n, co, config);
            rep.blowups += res.blowups;
            scanned += fmt::format("{}R={}", scanned.empty() ? "" : ";", R);
            const auto& best = res.best_stat();
            if (rep.recurrence.n == 0 || best.ci_low > rep.recurrence.ci_low ||
                (best.ci_low == rep.recurrence.ci_low && best.mean > rep.recurrence.mean)) {
                rep.recurrence = best;
                rep.recurrence_R = R;
                rep.recurrence_t = res.t_list[res.best];
            }
            if (best.ci_low > 0.0) {
                found = true;
                break;
            }
        }
        std::string ts;
        for (double t : options.t_grid) {
            ts += fmt::format("{}{}", ts.empty() ? "" : ",", t);
        }
        rep.scanned = fmt::format("{};t in {{{}}}{}", scanned, ts, found ? "" : " (no positive lower bound)");
    }

    // (c) random pairs of B(z, pair_radius).
    {
        const auto res = sync_probability(system, PairSource::ball(std::vector<double>(z.begin(), z.end()),
                                                                   options.pair_radius),
                                          options.sync_time, options.eta, n, config, options.certify.weights);
        rep.sync = res.proportion;
        rep.blowups += res.blowups;
    }

    const bool all_positive = rep.diameter_decay.ci_low > 0.0 && rep.recurrence.ci_low > 0.0 && rep.sync.ci_low > 0.0;
    if (all_positive && rep.sync.ci_low >= options.sync_level) {
        rep.verdict = Verdict::evidence_for;
        rep.reason = "diameter decay, recurrence and pair synchronization all have positive lower bounds";
    } else if (rep.sync.ci_high < options.sync_level) {
        rep.verdict = Verdict::evidence_against;
        rep.reason = fmt::format("pair synchronization upper bound {:.4g} below {}", rep.sync.ci_high,
                                 options.sync_level);
    } else {
        rep.verdict = Verdict::inconclusive;
        rep.reason = "evidence is mixed";
    }
    return rep;
}

}  // namespace rdslab
