#pragma once

// Catalog of drift fields dX = b(X) dt + Sigma dL with analytic Jacobians.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rdslab/noise.hpp"

namespace rdslab {

enum class DriftId {
    lorenz63,
    lorenz63_conjugated,
    doublewell_degenerate,
    cubic1d,
    geometric1d,
    gradient1d,
    linear_d,
};

using ParamMap = std::map<std::string, double>;

class SystemSpec {
public:
    [[nodiscard]] DriftId id() const { return id_; }
    [[nodiscard]] const std::string& name() const { return name_; }
    [[nodiscard]] int dim() const { return dim_; }
    /// Number of noise channels m (columns of the coupling matrix).
    [[nodiscard]] int noise_channels() const { return channels_; }
    [[nodiscard]] const ParamMap& params() const { return params_; }
    [[nodiscard]] double param(const std::string& key) const;

    /// Coupling matrix Sigma, row-major dim x noise_channels.
    [[nodiscard]] std::span<const double> coupling() const { return coupling_; }
    [[nodiscard]] int coupling_rank() const;

    /// True only for geometric1d: the noise enters as X dW.
    [[nodiscard]] bool multiplicative() const { return id_ == DriftId::geometric1d; }
    [[nodiscard]] bool additive() const { return !multiplicative(); }
    [[nodiscard]] bool requires_aux() const { return id_ == DriftId::lorenz63_conjugated; }
    [[nodiscard]] const OUPath* aux() const { return aux_.get(); }

    /// Copy with the OU path the conjugated Lorenz drift reads from.
    [[nodiscard]] SystemSpec with_aux(OUPath ou) const;

    void drift(double t, std::span<const double> x, std::span<double> out) const;
    /// Row-major dim x dim.
    void jacobian(double t, std::span<const double> x, std::span<double> out) const;

    [[nodiscard]] std::vector<double> drift(double t, std::span<const double> x) const;
    [[nodiscard]] std::vector<double> jacobian(double t, std::span<const double> x) const;
    [[nodiscard]] double jacobian_trace(double t, std::span<const double> x) const;

    /// Entrywise bound M with |Db(xi)_ij - Db(c)_ij| <= M_ij whenever
    /// |xi_k - c_k| <= delta_k for every k.
    void jacobian_variation_bound(std::span<const double> c, std::span<const double> delta,
                                  std::span<double> out) const;

    /// For quadratic b, with q(e) = b(x + e) - b(x) - Db(x) e (independent of x):
    /// |q(e)|_w <= norm |e|_w^2 and |<q(e), e>_w| <= inner |e|_w^3.
    struct QuadraticRemainder {
        double norm = 0.0;
        double inner = 0.0;
    };
    /// Empty when b is not quadratic.
    [[nodiscard]] std::optional<QuadraticRemainder> quadratic_remainder(std::span<const double> w) const;

    /// 1D drifts whose derivative b' is concave, so min b' over an interval is
    /// attained at an endpoint.
    [[nodiscard]] bool concave_derivative_1d() const;

private:
    friend SystemSpec build_system(const std::string& name, const ParamMap& params);
    [[nodiscard]] double ou_value(double t) const;

    DriftId id_ = DriftId::linear_d;
    std::string name_;
    int dim_ = 1;
    int channels_ = 1;
    ParamMap params_;
    std::vector<double> coupling_;
    std::shared_ptr<const OUPath> aux_;

    // Cached parameters.
    double sigma_ = 0.0;
    double rho_ = 0.0;
    double beta_ = 0.0;
    double lambda_ = 0.0;
    double quartic_ = 1.0;
    double quadratic_ = -1.0;
    std::vector<double> a_;  // linear_d matrix, row-major
};

/// Builds a catalog system. Throws ConfigurationError on unknown names,
/// unknown parameters, missing required parameters or invalid values.
SystemSpec build_system(const std::string& name, const ParamMap& params);

std::vector<std::string> system_names();

// ------------------------------------------------------ drift conditions

struct DriftCondition {
    enum class Kind { one_sided_lipschitz, eventually_monotone, monotone_at_point };

    Kind kind = Kind::one_sided_lipschitz;
    double lambda = 0.0;
    double eta = 0.0;
    double radius = 0.0;
    std::vector<double> point;

    /// <b(x)-b(y), x-y>_w <= lambda |x-y|_w^2.
    static DriftCondition one_sided_lipschitz(double lambda) { return {Kind::one_sided_lipschitz, lambda, 0, 0, {}}; }
    /// <= eta |x-y|^2 inside |x|+|y| < R, <= -lambda |x-y|^2 outside.
    static DriftCondition eventually_monotone(double R, double eta, double lambda) {
        return {Kind::eventually_monotone, lambda, eta, R, {}};
    }
    /// <b(x)-b(z), x-z>_w <= -lambda |x-z|_w^2.
    static DriftCondition monotone_at_point(std::vector<double> z, double lambda) {
        return {Kind::monotone_at_point, lambda, 0, 0, std::move(z)};
    }

    [[nodiscard]] std::string describe() const;
};

/// Sampling region: Euclidean ball.
struct Region {
    std::vector<double> center;
    double radius = 1.0;
};

struct DriftConditionReport {
    DriftCondition condition;
    std::vector<double> weights;
    Region region;
    std::int64_t n_pairs = 0;
    /// Largest normalized margin <b(x)-b(y),x-y>_w / |x-y|_w^2 - bound.
    double worst_margin = 0.0;
    std::vector<double> worst_x;
    std::vector<double> worst_y;
    bool pass = false;
    /// The quadratic form does not depend on the state (linear drift), so the
    /// region is irrelevant.
    bool state_independent = false;
    std::string system_name;
    std::string note;
};

inline constexpr double kDriftConditionTolerance = 1e-12;

/// Monte Carlo plus coarse-grid evidence for a drift condition. A pass is
/// evidence on the sampled region, not a proof.
DriftConditionReport verify_drift_condition(const SystemSpec& system, const DriftCondition& condition,
                                            std::span<const double> weights, const Region& region,
                                            std::int64_t n_pairs, std::uint64_t seed, double t = 0.0);

}  // namespace rdslab
