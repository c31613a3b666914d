#include "rdslab/config.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rdslab/errors.hpp"

namespace rdslab {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool valid_key(std::string_view k) {
    return !k.empty() && std::all_of(k.begin(), k.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
    });
}

void assign(ExperimentConfig& cfg, const std::string& key, const std::string& value, int line) {
    try {
        if (key == "scenario") {
            cfg.scenario = value;
        } else if (key == "seed") {
            const auto v = parse_integer(key, value);
            if (v < 0) {
                throw ConfigurationError("seed must be nonnegative");
            }
            cfg.seed = static_cast<std::uint64_t>(v);
        } else if (key == "reps") {
            cfg.reps = parse_integer(key, value);
        } else if (key == "workers") {
            cfg.workers = static_cast<int>(parse_integer(key, value));
        } else if (key == "out") {
            cfg.out = value;
        } else {
            const auto dot = key.find('.');
            if (dot == std::string::npos) {
                throw ConfigurationError(
                    fmt::format("unknown top-level key '{}' (scenario, seed, reps, workers, out)", key));
            }
            const std::string section = key.substr(0, dot);
            const auto& known = config_sections();
            if (std::find(known.begin(), known.end(), section) == known.end()) {
                throw ConfigurationError(fmt::format("unknown section '{}'", section));
            }
            cfg.values[key] = value;
        }
    } catch (const ParseError&) {
        throw;
    } catch (const Error& e) {
        throw ParseError(e.what(), line);
    }
}

}  // namespace

double parse_number(const std::string& key, const std::string& raw) {
    const auto s = trim(raw);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) {
        throw ConfigurationError(fmt::format("'{}': expected a number, got '{}'", key, raw));
    }
    return v;
}

std::int64_t parse_integer(const std::string& key, const std::string& raw) {
    const auto s = trim(raw);
    std::int64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
        throw ConfigurationError(fmt::format("'{}': expected an integer, got '{}'", key, raw));
    }
    return v;
}

std::vector<double> parse_list(const std::string& key, const std::string& raw) {
    std::vector<double> out;
    std::string_view rest = raw;
    while (true) {
        const auto comma = rest.find(',');
        const auto item = trim(rest.substr(0, comma));
        if (item.empty()) {
            throw ConfigurationError(fmt::format("'{}': empty list entry in '{}'", key, raw));
        }
        out.push_back(parse_number(key, std::string(item)));
        if (comma == std::string_view::npos) {
            break;
        }
        rest = rest.substr(comma + 1);
    }
    return out;
}

ExperimentConfig parse_config(std::string_view text) {
    ExperimentConfig cfg;
    std::string section;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
        pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ParseError("unterminated section header", line_no);
            }
            section = std::string(trim(line.substr(1, line.size() - 2)));
            const auto& known = config_sections();
            if (std::find(known.begin(), known.end(), section) == known.end()) {
                throw ParseError(fmt::format("unknown section '{}' (system, noise, run, tolerances)", section),
                                 line_no);
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ParseError(fmt::format("expected 'key = value', got '{}'", line), line_no);
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (!valid_key(key) || key.find('.') != std::string_view::npos) {
            throw ParseError(fmt::format("invalid key '{}'", key), line_no);
        }
        if (value.empty()) {
            throw ParseError(fmt::format("missing value for '{}'", key), line_no);
        }
        const std::string qualified = section.empty() ? std::string(key) : section + "." + std::string(key);
        assign(cfg, qualified, std::string(value), line_no);
    }
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigurationError(fmt::format("cannot read config file '{}'", path));
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void apply_setting(ExperimentConfig& config, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) {
        throw ParseError(fmt::format("--set expects key=value, got '{}'", assignment), 0);
    }
    const auto key = trim(assignment.substr(0, eq));
    const auto value = trim(assignment.substr(eq + 1));
    if (!valid_key(key) || value.empty()) {
        throw ParseError(fmt::format("--set expects key=value, got '{}'", assignment), 0);
    }
    assign(config, std::string(key), std::string(value), 0);
}

}  // namespace rdslab
