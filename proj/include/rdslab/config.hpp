#pragma once

// Experiment configuration: flat key = value text with one level of
// [section] headers.
//
//   scenario = lorenz-gamma-sweep
//   seed = 7
//   [system]
//   rho = 0.5
//   [tolerances]
//   eta = 1e-6
//
// Keys inside a section are addressed as "section.key". Lists are comma
// separated. '#' starts a comment.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace rdslab {

struct ExperimentConfig {
    std::optional<std::string> scenario;
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> reps;
    std::optional<int> workers;
    std::optional<std::string> out;
    /// Qualified key -> raw value.
    std::map<std::string, std::string> values;
};

inline const std::vector<std::string>& config_sections() {
    static const std::vector<std::string> s{"system", "noise", "run", "tolerances"};
    return s;
}

/// Throws ParseError carrying the 1-based line number.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::string& path);

/// Applies "key=value" (qualified key or top-level key). Throws ParseError
/// (line 0) on malformed input.
void apply_setting(ExperimentConfig& config, std::string_view assignment);

double parse_number(const std::string& key, const std::string& raw);
std::int64_t parse_integer(const std::string& key, const std::string& raw);
std::vector<double> parse_list(const std::string& key, const std::string& raw);

}  // namespace rdslab
