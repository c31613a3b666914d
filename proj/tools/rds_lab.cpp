// rds-lab: runs the named experiments and writes CSV reports.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <iostream>
#include <string>
#include <vector>

#include "rdslab/config.hpp"
#include "rdslab/errors.hpp"
#include "rdslab/scenarios.hpp"

namespace {

std::string settings_help() {
    std::string s = "Scenario settings (defaults):\n";
    for (const auto& sc : rdslab::scenarios()) {
        s += fmt::format("  {} (reps {})\n", sc.name, sc.default_reps);
        for (const auto& st : sc.settings) {
            s += fmt::format("    {} = {}    {}\n", st.key, st.value, st.help);
        }
    }
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Random dynamical systems lab: synchronization-by-noise experiments"};
    app.require_subcommand(1);
    app.footer(settings_help());

    auto* run = app.add_subcommand("run", "Run a scenario");
    std::string scenario, config_file, out_dir;
    std::uint64_t seed = 0;
    std::int64_t reps = 0;
    int workers = 0;
    std::vector<std::string> sets;
    run->add_option("scenario", scenario, "Scenario name (see 'list')")->required();
    run->add_option("--config", config_file, "Config file");
    run->add_option("--out", out_dir, "Output directory (default rds-lab-out)");
    run->add_option("--seed", seed, "Master seed (default 1)");
    run->add_option("--reps", reps, "Replicas (scenario default)");
    run->add_option("--workers", workers, "Worker threads (default 1)");
    run->add_option("--set", sets, "Override, e.g. --set system.rho=0.5")->take_all();

    auto* list = app.add_subcommand("list", "List scenarios");

    auto* validate = app.add_subcommand("validate", "Check a config without running it");
    std::string validate_file;
    validate->add_option("--config", validate_file, "Config file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    if (list->parsed()) {
        for (const auto& sc : rdslab::scenarios()) {
            std::cout << fmt::format("{:<26}{}\n{:<26}{}\n", sc.name, sc.description, "", sc.anchor);
        }
        return 0;
    }

    try {
        if (validate->parsed()) {
            const auto cfg = rdslab::load_config(validate_file);
            const auto rc = rdslab::resolve_config(cfg);
            std::cout << rdslab::effective_config_text(rc);
            return 0;
        }
        rdslab::ExperimentConfig cfg;
        if (!config_file.empty()) {
            cfg = rdslab::load_config(config_file);
        }
        if (cfg.scenario && *cfg.scenario != scenario) {
            throw rdslab::ConfigurationError(
                fmt::format("config names scenario '{}' but '{}' was requested", *cfg.scenario, scenario));
        }
        cfg.scenario = scenario;
        if (run->count("--seed") > 0) {
            cfg.seed = seed;
        }
        if (run->count("--reps") > 0) {
            cfg.reps = reps;
        }
        if (run->count("--workers") > 0) {
            cfg.workers = workers;
        }
        if (!out_dir.empty()) {
            cfg.out = out_dir;
        }
        for (const auto& s : sets) {
            rdslab::apply_setting(cfg, s);
        }
        const auto res = rdslab::run_experiment(cfg);
        if (res.exit_code == 0) {
            std::cout << res.message << '\n';
        } else {
            std::cerr << "rds-lab: " << res.message << '\n';
        }
        return res.exit_code;
    } catch (const rdslab::ParseError& e) {
        std::cerr << "rds-lab: " << e.what() << '\n';
        return 2;
    } catch (const rdslab::ConfigurationError& e) {
        std::cerr << "rds-lab: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "rds-lab: " << e.what() << '\n';
        return 1;
    }
}
