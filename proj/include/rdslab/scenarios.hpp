#pragma once

// Scenario registry and experiment runner behind the rds-lab tool.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rdslab/config.hpp"

namespace rdslab {

struct Setting {
    enum class Type { number, integer, list, text };
    std::string key;  // qualified, e.g. "system.rho"
    Type type = Type::number;
    std::string value;  // default
    std::string help;
};

/// Defaults resolved and validated.
struct RunConfig {
    std::string scenario;
    std::uint64_t seed = 1;
    std::int64_t reps = 1;
    int workers = 1;
    std::string out = "rds-lab-out";
    std::map<std::string, std::string> values;

    [[nodiscard]] double number(const std::string& key) const;
    [[nodiscard]] std::int64_t integer(const std::string& key) const;
    [[nodiscard]] std::vector<double> list(const std::string& key) const;
    [[nodiscard]] const std::string& text(const std::string& key) const;
};

struct SummaryRow {
    std::string scenario;
    std::string param;
    double value = 0.0;
    double estimate = 0.0;
    double stderr_ = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::int64_t n = 0;
    std::string verdict;
};

struct ScenarioOutput {
    std::vector<SummaryRow> rows;
    /// Per-diagnostic CSV files: name -> content.
    std::vector<std::pair<std::string, std::string>> files;
    std::int64_t attempted = 0;
    std::int64_t blowups = 0;
};

struct Scenario {
    std::string name;
    std::string anchor;
    std::string description;
    std::int64_t default_reps = 1;
    std::vector<Setting> settings;
    std::function<ScenarioOutput(const RunConfig&)> run;
};

const std::vector<Scenario>& scenarios();

/// Throws ConfigurationError listing the valid names.
const Scenario& find_scenario(const std::string& name);

/// Fills defaults and validates keys and value types.
RunConfig resolve_config(const ExperimentConfig& config);

/// Config text that resolves to exactly the same RunConfig.
std::string effective_config_text(const RunConfig& config);

ScenarioOutput run_scenario(const RunConfig& config);

std::string summary_csv(const std::vector<SummaryRow>& rows);

inline constexpr const char* kSchemaLine = "# schema=rds-lab.v1";

struct ExperimentResult {
    int exit_code = 0;
    std::string message;
    ScenarioOutput output;
};

/// Resolves, runs and writes summary.csv, the diagnostic CSVs and
/// effective.cfg into the output directory. Exit codes: 0 completed,
/// 2 validation error, 3 blow-ups beyond the failure budget.
ExperimentResult run_experiment(const ExperimentConfig& config, bool write_files = true);

}  // namespace rdslab
