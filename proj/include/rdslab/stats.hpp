#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rdslab {

/// Monte Carlo estimate with a 95% interval.
struct EnsembleStat {
    std::int64_t n = 0;
    double mean = 0.0;
    double std_error = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::string label;
};

inline constexpr double kZ95 = 1.959963984540054;

/// Proportion with a Wilson score interval.
EnsembleStat proportion_stat(std::int64_t successes, std::int64_t n, std::string label);

/// Sample mean with a normal interval; stderr = sd / sqrt(n).
EnsembleStat mean_stat(std::span<const double> values, std::string label);

/// Time average of a series with batch-means standard error.
/// Uses floor(len / batch_len) batches; trailing samples fold into the mean
/// but not into the batches. Throws LengthError if len < 2 * batch_len.
EnsembleStat batch_means(std::span<const double> series, std::int64_t batch_len, std::string label);

/// Batch-means estimate with a fixed number of batches.
EnsembleStat batch_means_count(std::span<const double> series, int n_batches, std::string label);

}  // namespace rdslab
