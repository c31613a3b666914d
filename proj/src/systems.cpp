#include "rdslab/systems.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>

#include "rdslab/errors.hpp"
#include "rdslab/metric.hpp"
#include "rdslab/rng.hpp"

namespace rdslab {

namespace {

struct ParamRule {
    std::string key;
    bool required;
    double fallback;
};

const std::map<std::string, DriftId>& name_table() {
    static const std::map<std::string, DriftId> table{
        {"lorenz63", DriftId::lorenz63},
        {"lorenz63_conjugated", DriftId::lorenz63_conjugated},
        {"doublewell_degenerate", DriftId::doublewell_degenerate},
        {"cubic1d", DriftId::cubic1d},
        {"geometric1d", DriftId::geometric1d},
        {"gradient1d", DriftId::gradient1d},
        {"linear_d", DriftId::linear_d},
    };
    return table;
}

std::vector<ParamRule> rules_for(DriftId id) {
    switch (id) {
        case DriftId::lorenz63:
            return {{"sigma", true, 0}, {"rho", true, 0}, {"beta", true, 0}, {"gamma", false, 0.0}};
        case DriftId::lorenz63_conjugated:
            return {{"sigma", true, 0}, {"rho", true, 0}, {"beta", true, 0}, {"gamma", false, 0.0},
                    {"lambda", false, -1.0}};
        case DriftId::doublewell_degenerate:
            return {{"d", true, 0}, {"n", true, 0}, {"sigma", false, 1.0}};
        case DriftId::cubic1d:
        case DriftId::geometric1d:
            return {{"sigma", false, 1.0}};
        case DriftId::gradient1d:
            return {{"quartic", false, 1.0}, {"quadratic", false, -1.0}, {"sigma", false, 1.0}};
        case DriftId::linear_d:
            return {{"d", true, 0}, {"sigma", false, 1.0}};
    }
    return {};
}

int as_dimension(double v, const char* what) {
    if (!(v >= 1.0) || v != std::floor(v) || v > 64.0) {
        throw ConfigurationError(fmt::format("{} must be an integer in [1, 64], got {}", what, v));
    }
    return static_cast<int>(v);
}

bool is_linear_entry(const std::string& key, int d) {
    int i = -1, j = -1;
    char tail = 0;
    if (std::sscanf(key.c_str(), "a_%d_%d%c", &i, &j, &tail) != 2) {
        return false;
    }
    return i >= 0 && j >= 0 && i < d && j < d && key == fmt::format("a_{}_{}", i, j);
}

}  // namespace

std::vector<std::string> system_names() {
    std::vector<std::string> out;
    for (const auto& [k, v] : name_table()) {
        out.push_back(k);
    }
    return out;
}

SystemSpec build_system(const std::string& name, const ParamMap& params) {
    const auto it = name_table().find(name);
    if (it == name_table().end()) {
        std::string known;
        for (const auto& n : system_names()) {
            known += (known.empty() ? "" : ", ") + n;
        }
        throw ConfigurationError(fmt::format("unknown system '{}' (known: {})", name, known));
    }
    SystemSpec s;
    s.id_ = it->second;
    s.name_ = name;

    // Resolve declared parameters.
    std::set<std::string> declared;
    for (const auto& rule : rules_for(s.id_)) {
        declared.insert(rule.key);
        const auto p = params.find(rule.key);
        if (p != params.end()) {
            if (!std::isfinite(p->second)) {
                throw ConfigurationError(fmt::format("{}: parameter '{}' must be finite", name, rule.key));
            }
            s.params_[rule.key] = p->second;
        } else if (rule.required) {
            throw ConfigurationError(fmt::format("{}: missing required parameter '{}'", name, rule.key));
        } else {
            s.params_[rule.key] = rule.fallback;
        }
    }
    int linear_dim = 0;
    if (s.id_ == DriftId::linear_d) {
        linear_dim = as_dimension(s.params_["d"], "linear_d: d");
    }
    for (const auto& [k, v] : params) {
        if (declared.count(k) == 0) {
            if (s.id_ == DriftId::linear_d && is_linear_entry(k, linear_dim)) {
                if (!std::isfinite(v)) {
                    throw ConfigurationError(fmt::format("linear_d: entry '{}' must be finite", k));
                }
                s.params_[k] = v;
                continue;
            }
            throw ConfigurationError(fmt::format("{}: unknown parameter '{}'", name, k));
        }
    }

    auto require_positive = [&](const char* key) {
        if (!(s.params_[key] > 0.0)) {
            throw ConfigurationError(fmt::format("{}: parameter '{}' must be positive", name, key));
        }
    };

    switch (s.id_) {
        case DriftId::lorenz63:
        case DriftId::lorenz63_conjugated: {
            require_positive("sigma");
            require_positive("beta");
            s.sigma_ = s.params_["sigma"];
            s.rho_ = s.params_["rho"];
            s.beta_ = s.params_["beta"];
            s.dim_ = 3;
            s.channels_ = 1;
            if (s.id_ == DriftId::lorenz63) {
                s.coupling_ = {0.0, 0.0, s.params_["gamma"]};
            } else {
                if (s.params_["lambda"] < 0.0) {
                    s.params_["lambda"] = s.beta_;
                }
                require_positive("lambda");
                s.lambda_ = s.params_["lambda"];
                // A random ODE: the noise enters only through the OU path.
                s.coupling_ = {0.0, 0.0, 0.0};
            }
            break;
        }
        case DriftId::doublewell_degenerate: {
            const int d = as_dimension(s.params_["d"], "doublewell_degenerate: d");
            const int n = as_dimension(s.params_["n"], "doublewell_degenerate: n");
            if (n >= d) {
                throw ConfigurationError("doublewell_degenerate: need n < d (degenerate noise)");
            }
            require_positive("sigma");
            s.dim_ = d;
            s.channels_ = n;
            s.sigma_ = s.params_["sigma"];
            s.coupling_.assign(static_cast<std::size_t>(d * n), 0.0);
            for (int i = 0; i < n; ++i) {
                s.coupling_[i * n + i] = s.sigma_;
            }
            break;
        }
        case DriftId::cubic1d:
        case DriftId::geometric1d:
            s.dim_ = 1;
            s.channels_ = 1;
            s.sigma_ = s.params_["sigma"];
            s.coupling_ = {s.sigma_};
            break;
        case DriftId::gradient1d:
            s.dim_ = 1;
            s.channels_ = 1;
            s.sigma_ = s.params_["sigma"];
            s.quartic_ = s.params_["quartic"];
            s.quadratic_ = s.params_["quadratic"];
            s.coupling_ = {s.sigma_};
            break;
        case DriftId::linear_d: {
            const int d = linear_dim;
            s.dim_ = d;
            s.channels_ = d;
            s.sigma_ = s.params_["sigma"];
            s.a_.assign(static_cast<std::size_t>(d * d), 0.0);
            for (int i = 0; i < d; ++i) {
                for (int j = 0; j < d; ++j) {
                    const auto e = s.params_.find(fmt::format("a_{}_{}", i, j));
                    if (e != s.params_.end()) {
                        s.a_[i * d + j] = e->second;
                    }
                }
            }
            s.coupling_.assign(static_cast<std::size_t>(d * d), 0.0);
            for (int i = 0; i < d; ++i) {
                s.coupling_[i * d + i] = s.sigma_;
            }
            break;
        }
    }
    return s;
}

double SystemSpec::param(const std::string& key) const {
    const auto it = params_.find(key);
    if (it == params_.end()) {
        throw ConfigurationError(fmt::format("{}: no parameter '{}'", name_, key));
    }
    return it->second;
}

int SystemSpec::coupling_rank() const {
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(
        coupling_.data(), dim_, channels_);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
    return static_cast<int>(lu.rank());
}

SystemSpec SystemSpec::with_aux(OUPath ou) const {
    if (!requires_aux()) {
        throw StateError(fmt::format("{} does not take an auxiliary OU path", name_));
    }
    if (std::abs(ou.lambda - lambda_) > 1e-12 * std::max(1.0, lambda_) ||
        std::abs(ou.gamma - params_.at("gamma")) > 1e-12 * std::max(1.0, std::abs(ou.gamma))) {
        throw StateError(fmt::format("{}: OU path (lambda={}, gamma={}) does not match system parameters",
                                     name_, ou.lambda, ou.gamma));
    }
    SystemSpec copy = *this;
    copy.aux_ = std::make_shared<const OUPath>(std::move(ou));
    return copy;
}

double SystemSpec::ou_value(double t) const {
    if (!aux_) {
        throw StateError(fmt::format("{} needs an auxiliary OU path (with_aux)", name_));
    }
    return aux_->at_time(t);
}

void SystemSpec::drift(double t, std::span<const double> x, std::span<double> out) const {
    switch (id_) {
        case DriftId::lorenz63:
            out[0] = sigma_ * (x[1] - x[0]);
            out[1] = rho_ * x[0] - x[1] - x[0] * x[2];
            out[2] = -beta_ * x[2] + x[0] * x[1];
            return;
        case DriftId::lorenz63_conjugated: {
            const double o = ou_value(t);
            out[0] = sigma_ * (x[1] - x[0]);
            out[1] = (rho_ - o) * x[0] - x[1] - x[0] * x[2];
            out[2] = -beta_ * x[2] + x[0] * x[1] - (beta_ - lambda_) * o;
            return;
        }
        case DriftId::doublewell_degenerate: {
            double r2 = 0.0;
            for (int i = 0; i < dim_; ++i) {
                r2 += x[i] * x[i];
            }
            for (int i = 0; i < dim_; ++i) {
                out[i] = x[i] - r2 * x[i];
            }
            return;
        }
        case DriftId::cubic1d:
            out[0] = x[0] - x[0] * x[0] * x[0];
            return;
        case DriftId::geometric1d:
            out[0] = 0.0;
            return;
        case DriftId::gradient1d:
            out[0] = -quartic_ * x[0] * x[0] * x[0] - quadratic_ * x[0];
            return;
        case DriftId::linear_d:
            for (int i = 0; i < dim_; ++i) {
                double s = 0.0;
                for (int j = 0; j < dim_; ++j) {
                    s += a_[i * dim_ + j] * x[j];
                }
                out[i] = s;
            }
            return;
    }
}

void SystemSpec::jacobian(double t, std::span<const double> x, std::span<double> out) const {
    switch (id_) {
        case DriftId::lorenz63:
        case DriftId::lorenz63_conjugated: {
            const double o = id_ == DriftId::lorenz63 ? 0.0 : ou_value(t);
            out[0] = -sigma_;
            out[1] = sigma_;
            out[2] = 0.0;
            out[3] = rho_ - o - x[2];
            out[4] = -1.0;
            out[5] = -x[0];
            out[6] = x[1];
            out[7] = x[0];
            out[8] = -beta_;
            return;
        }
        case DriftId::doublewell_degenerate: {
            double r2 = 0.0;
            for (int i = 0; i < dim_; ++i) {
                r2 += x[i] * x[i];
            }
            for (int i = 0; i < dim_; ++i) {
                for (int j = 0; j < dim_; ++j) {
                    out[i * dim_ + j] = (i == j ? 1.0 - r2 : 0.0) - 2.0 * x[i] * x[j];
                }
            }
            return;
        }
        case DriftId::cubic1d:
            out[0] = 1.0 - 3.0 * x[0] * x[0];
            return;
        case DriftId::geometric1d:
            out[0] = 0.0;
            return;
        case DriftId::gradient1d:
            out[0] = -3.0 * quartic_ * x[0] * x[0] - quadratic_;
            return;
        case DriftId::linear_d:
            std::copy(a_.begin(), a_.end(), out.begin());
            return;
    }
}

std::vector<double> SystemSpec::drift(double t, std::span<const double> x) const {
    std::vector<double> out(static_cast<std::size_t>(dim_));
    drift(t, x, out);
    return out;
}

std::vector<double> SystemSpec::jacobian(double t, std::span<const double> x) const {
    std::vector<double> out(static_cast<std::size_t>(dim_ * dim_));
    jacobian(t, x, out);
    return out;
}

double SystemSpec::jacobian_trace(double t, std::span<const double> x) const {
    switch (id_) {
        case DriftId::lorenz63:
        case DriftId::lorenz63_conjugated:
            return -(sigma_ + 1.0 + beta_);
        default: {
            const auto j = jacobian(t, x);
            double tr = 0.0;
            for (int i = 0; i < dim_; ++i) {
                tr += j[i * dim_ + i];
            }
            return tr;
        }
    }
}

void SystemSpec::jacobian_variation_bound(std::span<const double> c, std::span<const double> delta,
                                          std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    switch (id_) {
        case DriftId::lorenz63:
        case DriftId::lorenz63_conjugated:
            out[3] = delta[2];
            out[5] = delta[0];
            out[6] = delta[1];
            out[7] = delta[0];
            return;
        case DriftId::doublewell_degenerate: {
            double s = 0.0;
            for (int k = 0; k < dim_; ++k) {
                s += 2.0 * std::abs(c[k]) * delta[k] + delta[k] * delta[k];
            }
            for (int i = 0; i < dim_; ++i) {
                for (int j = 0; j < dim_; ++j) {
                    const double prod = std::abs(c[i]) * delta[j] + std::abs(c[j]) * delta[i] + delta[i] * delta[j];
                    out[i * dim_ + j] = (i == j ? s : 0.0) + 2.0 * prod;
                }
            }
            return;
        }
        case DriftId::cubic1d:
            out[0] = 3.0 * (2.0 * std::abs(c[0]) * delta[0] + delta[0] * delta[0]);
            return;
        case DriftId::gradient1d:
            out[0] = 3.0 * std::abs(quartic_) * (2.0 * std::abs(c[0]) * delta[0] + delta[0] * delta[0]);
            return;
        case DriftId::geometric1d:
        case DriftId::linear_d:
            return;
    }
}

std::optional<SystemSpec::QuadraticRemainder> SystemSpec::quadratic_remainder(std::span<const double> w) const {
    switch (id_) {
        case DriftId::linear_d:
            return QuadraticRemainder{};
        case DriftId::lorenz63:
        case DriftId::lorenz63_conjugated: {
            // q(e) = (0, -e0 e2, e0 e1), <q(e), e>_w = (w2 - w1) e0 e1 e2
            const double hi = std::max(w[1], w[2]);
            const double lo = std::min(w[1], w[2]);
            QuadraticRemainder q;
            q.norm = 0.5 * std::sqrt(hi / (lo * w[0]));
            q.inner = std::abs(w[2] - w[1]) / (3.0 * std::sqrt(3.0) * std::sqrt(w[0] * w[1] * w[2]));
            return q;
        }
        default:
            return std::nullopt;
    }
}

bool SystemSpec::concave_derivative_1d() const {
    if (dim_ != 1) {
        return false;
    }
    switch (id_) {
        case DriftId::cubic1d:
        case DriftId::geometric1d:
        case DriftId::linear_d:
            return true;
        case DriftId::gradient1d:
            return quartic_ >= 0.0;
        default:
            return false;
    }
}

// ------------------------------------------------------ drift conditions

std::string DriftCondition::describe() const {
    switch (kind) {
        case Kind::one_sided_lipschitz:
            return fmt::format("one_sided_lipschitz(lambda={})", lambda);
        case Kind::eventually_monotone:
            return fmt::format("eventually_monotone(R={}, eta={}, lambda={})", radius, eta, lambda);
        case Kind::monotone_at_point:
            return fmt::format("monotone_at_point(lambda={})", lambda);
    }
    return "?";
}

namespace {

std::vector<double> uniform_in_ball(rng::Cursor& cur, const Region& region) {
    const std::size_t d = region.center.size();
    std::vector<double> g(d);
    double norm = 0.0;
    do {
        norm = 0.0;
        for (auto& v : g) {
            v = cur.normal();
            norm += v * v;
        }
        norm = std::sqrt(norm);
    } while (norm == 0.0);
    const double r = region.radius * std::pow(cur.uniform(), 1.0 / static_cast<double>(d));
    for (std::size_t i = 0; i < d; ++i) {
        g[i] = region.center[i] + r * g[i] / norm;
    }
    return g;
}

std::vector<std::vector<double>> coarse_grid(const Region& region) {
    const std::size_t d = region.center.size();
    int per_axis = 2;
    while (std::pow(per_axis + 1, static_cast<double>(d)) <= 400.0) {
        ++per_axis;
    }
    std::vector<std::vector<double>> pts;
    std::vector<int> idx(d, 0);
    while (true) {
        std::vector<double> p(d);
        double r2 = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double u = per_axis == 1 ? 0.0 : -1.0 + 2.0 * idx[i] / (per_axis - 1);
            p[i] = region.center[i] + region.radius * u;
            r2 += (p[i] - region.center[i]) * (p[i] - region.center[i]);
        }
        if (r2 <= region.radius * region.radius * (1.0 + 1e-12)) {
            pts.push_back(std::move(p));
        }
        std::size_t k = 0;
        while (k < d && ++idx[k] == per_axis) {
            idx[k] = 0;
            ++k;
        }
        if (k == d) {
            break;
        }
    }
    return pts;
}

}  // namespace

DriftConditionReport verify_drift_condition(const SystemSpec& system, const DriftCondition& condition,
                                            std::span<const double> weights, const Region& region,
                                            std::int64_t n_pairs, std::uint64_t seed, double t) {
    const int d = system.dim();
    if (static_cast<int>(region.center.size()) != d) {
        throw ParameterError("region center dimension does not match the system");
    }
    if (!(region.radius > 0.0)) {
        throw ParameterError("region radius must be positive");
    }
    std::vector<double> w(weights.begin(), weights.end());
    if (w.empty()) {
        w.assign(static_cast<std::size_t>(d), 1.0);
    }
    if (static_cast<int>(w.size()) != d ||
        std::any_of(w.begin(), w.end(), [](double v) { return !(v > 0.0) || !std::isfinite(v); })) {
        throw ParameterError("metric weights must be positive, one per dimension");
    }
    if (n_pairs < 0) {
        throw ParameterError("n_pairs must be nonnegative");
    }
    if (condition.kind == DriftCondition::Kind::monotone_at_point &&
        static_cast<int>(condition.point.size()) != d) {
        throw ParameterError("monotone_at_point needs a point of the system dimension");
    }
    if (condition.kind == DriftCondition::Kind::eventually_monotone &&
        !(condition.radius > 0.0 && condition.eta > 0.0 && condition.lambda > 0.0)) {
        throw ParameterError("eventually_monotone needs R, eta, lambda > 0");
    }

    DriftConditionReport rep;
    rep.condition = condition;
    rep.weights = w;
    rep.region = region;
    rep.system_name = system.name();
    rep.state_independent = system.id() == DriftId::linear_d;
    rep.worst_margin = -std::numeric_limits<double>::infinity();
    if (std::any_of(w.begin(), w.end(), [&](double v) { return v != w[0]; })) {
        rep.note = "weighted metric";
    }

    std::vector<double> bx(static_cast<std::size_t>(d)), by(static_cast<std::size_t>(d)),
        diff(static_cast<std::size_t>(d)), bdiff(static_cast<std::size_t>(d));
    std::int64_t tested = 0;

    auto check = [&](std::span<const double> x, std::span<const double> y) {
        for (int i = 0; i < d; ++i) {
            diff[i] = x[i] - y[i];
        }
        const double n2 = weighted_dot(diff, diff, w);
        if (!(n2 > 0.0)) {
            return;
        }
        system.drift(t, x, bx);
        system.drift(t, y, by);
        for (int i = 0; i < d; ++i) {
            bdiff[i] = bx[i] - by[i];
        }
        const double ratio = weighted_dot(bdiff, diff, w) / n2;
        double bound = 0.0;
        switch (condition.kind) {
            case DriftCondition::Kind::one_sided_lipschitz:
                bound = condition.lambda;
                break;
            case DriftCondition::Kind::eventually_monotone:
                bound = (weighted_norm(x, w) + weighted_norm(y, w) < condition.radius) ? condition.eta
                                                                                     : -condition.lambda;
                break;
            case DriftCondition::Kind::monotone_at_point:
                bound = -condition.lambda;
                break;
        }
        const double margin = ratio - bound;
        ++tested;
        if (margin > rep.worst_margin) {
            rep.worst_margin = margin;
            rep.worst_x.assign(x.begin(), x.end());
            rep.worst_y.assign(y.begin(), y.end());
        }
    };

    const bool at_point = condition.kind == DriftCondition::Kind::monotone_at_point;
    const auto grid = coarse_grid(region);
    if (at_point) {
        for (const auto& p : grid) {
            check(p, condition.point);
        }
    } else {
        for (std::size_t i = 0; i < grid.size(); ++i) {
            for (std::size_t j = i + 1; j < grid.size(); ++j) {
                check(grid[i], grid[j]);
            }
        }
    }

    rng::Cursor cur(rng::Stream(seed, 0, rng::substream(0, rng::Purpose::drift_check)));
    for (std::int64_t k = 0; k < n_pairs; ++k) {
        const auto x = uniform_in_ball(cur, region);
        if (at_point) {
            check(x, condition.point);
        } else {
            const auto y = uniform_in_ball(cur, region);
            check(x, y);
        }
    }
    rep.n_pairs = tested;
    if (tested == 0) {
        rep.worst_margin = 0.0;
    }
    rep.pass = rep.worst_margin <= kDriftConditionTolerance;
    return rep;
}

}  // namespace rdslab
