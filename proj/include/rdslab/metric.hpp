#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace rdslab {

/// Diagonal inner product <u, v>_w = sum_i w_i u_i v_i. Empty weights mean w = 1.
inline double weighted_dot(std::span<const double> u, std::span<const double> v, std::span<const double> w) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        s += (w.empty() ? 1.0 : w[i]) * u[i] * v[i];
    }
    return s;
}

inline double weighted_norm(std::span<const double> u, std::span<const double> w) {
    return std::sqrt(weighted_dot(u, u, w));
}

inline double weighted_distance(std::span<const double> x, std::span<const double> y, std::span<const double> w) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        s += (w.empty() ? 1.0 : w[i]) * d * d;
    }
    return std::sqrt(s);
}

inline double euclidean_distance(std::span<const double> x, std::span<const double> y) {
    return weighted_distance(x, y, {});
}

}  // namespace rdslab
