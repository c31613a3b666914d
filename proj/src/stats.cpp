#include "rdslab/stats.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "rdslab/errors.hpp"

namespace rdslab {

EnsembleStat proportion_stat(std::int64_t successes, std::int64_t n, std::string label) {
    if (n < 1 || successes < 0 || successes > n) {
        throw ParameterError(fmt::format("invalid proportion {}/{}", successes, n));
    }
    const double nn = static_cast<double>(n);
    const double p = static_cast<double>(successes) / nn;
    const double z2 = kZ95 * kZ95;
    const double denom = 1.0 + z2 / nn;
    const double centre = (p + z2 / (2.0 * nn)) / denom;
    const double half = kZ95 * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
    EnsembleStat s;
    s.n = n;
    s.mean = p;
    s.std_error = std::sqrt(p * (1.0 - p) / nn);
    // Clamp so the point estimate always lies inside the interval.
    s.ci_low = std::min(p, std::max(0.0, centre - half));
    s.ci_high = std::max(p, std::min(1.0, centre + half));
    if (successes == 0) {
        s.ci_low = 0.0;
    }
    if (successes == n) {
        s.ci_high = 1.0;
    }
    s.label = std::move(label);
    return s;
}

EnsembleStat mean_stat(std::span<const double> values, std::string label) {
    if (values.empty()) {
        throw LengthError("mean of an empty sample");
    }
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) {
        mean += v;
    }
    mean /= n;
    double ss = 0.0;
    for (double v : values) {
        ss += (v - mean) * (v - mean);
    }
    const double se = values.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
    EnsembleStat s;
    s.n = static_cast<std::int64_t>(values.size());
    s.mean = mean;
    s.std_error = se;
    s.ci_low = mean - kZ95 * se;
    s.ci_high = mean + kZ95 * se;
    s.label = std::move(label);
    return s;
}

EnsembleStat batch_means(std::span<const double> series, std::int64_t batch_len, std::string label) {
    if (batch_len < 1) {
        throw LengthError("batch length must be at least 1");
    }
    const auto len = static_cast<std::int64_t>(series.size());
    if (len < 2 * batch_len) {
        throw LengthError(fmt::format("series of length {} is shorter than two batches of {}", len, batch_len));
    }
    const std::int64_t nb = len / batch_len;
    std::vector<double> means(static_cast<std::size_t>(nb), 0.0);
    for (std::int64_t b = 0; b < nb; ++b) {
        double s = 0.0;
        for (std::int64_t i = 0; i < batch_len; ++i) {
            s += series[b * batch_len + i];
        }
        means[b] = s / static_cast<double>(batch_len);
    }
    double total = 0.0;
    for (double v : series) {
        total += v;
    }
    const double mean = total / static_cast<double>(len);
    double ss = 0.0;
    for (double m : means) {
        ss += (m - mean) * (m - mean);
    }
    const double se = std::sqrt(ss / static_cast<double>(nb - 1) / static_cast<double>(nb));
    EnsembleStat s;
    s.n = len;
    s.mean = mean;
    s.std_error = se;
    s.ci_low = mean - kZ95 * se;
    s.ci_high = mean + kZ95 * se;
    s.label = std::move(label);
    return s;
}

EnsembleStat batch_means_count(std::span<const double> series, int n_batches, std::string label) {
    if (n_batches < 2) {
        throw LengthError("need at least two batches");
    }
    const auto len = static_cast<std::int64_t>(series.size());
    return batch_means(series, std::max<std::int64_t>(1, len / n_batches), std::move(label));
}

}  // namespace rdslab
