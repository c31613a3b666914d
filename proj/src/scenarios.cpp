#include "rdslab/scenarios.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include "rdslab/errors.hpp"
#include "rdslab/integrate.hpp"
#include "rdslab/measures.hpp"
#include "rdslab/parallel.hpp"
#include "rdslab/rds.hpp"
#include "rdslab/rng.hpp"
#include "rdslab/stats.hpp"
#include "rdslab/systems.hpp"

namespace rdslab {

namespace {

using T = Setting::Type;

std::string g17(double v) {
    return fmt::format("{}", v);
}

SummaryRow make_row(const RunConfig& cfg, std::string param, double value, const EnsembleStat& s,
                    std::string verdict) {
    return {cfg.scenario, std::move(param), value, s.mean, s.std_error, s.ci_low, s.ci_high, s.n, std::move(verdict)};
}

SummaryRow point_row(const RunConfig& cfg, std::string param, double value, double estimate, std::int64_t n,
                     std::string verdict) {
    return {cfg.scenario, std::move(param), value, estimate, 0.0, estimate, estimate, n, std::move(verdict)};
}

std::string csv_header(const std::string& columns) {
    return std::string(kSchemaLine) + "\n" + columns + "\n";
}

EnsembleConfig ensemble(const RunConfig& cfg, std::vector<ChannelKind> kinds, std::uint64_t first_stream = 0) {
    EnsembleConfig e;
    e.kinds = std::move(kinds);
    e.dt = cfg.number("run.dt");
    e.master_seed = cfg.seed;
    e.first_stream = first_stream;
    e.workers = cfg.workers;
    const auto& s = cfg.text("run.scheme");
    if (s != "auto") {
        e.scheme = parse_scheme(s);
    }
    return e;
}

Scheme scheme_of(const RunConfig& cfg, const SystemSpec& sys) {
    const auto& s = cfg.text("run.scheme");
    return s == "auto" ? default_scheme(sys) : parse_scheme(s);
}

std::vector<double> weights_or_empty(const RunConfig& cfg, const std::string& key, int dim) {
    auto w = cfg.list(key);
    if (static_cast<int>(w.size()) != dim) {
        throw ConfigurationError(fmt::format("'{}' needs {} entries", key, dim));
    }
    return w;
}

// ------------------------------------------------------------- scenarios

ScenarioOutput run_gbm_sync(const RunConfig& cfg) {
    const double sigma = cfg.number("system.sigma");
    const SystemSpec sys = build_system("geometric1d", {{"sigma", sigma}});
    const EnsembleConfig ens = ensemble(cfg, {ChannelKind::brownian()});
    const TimeGrid grid = TimeGrid::over(0.0, cfg.number("run.t"), ens.dt);
    const std::vector<double> x{cfg.number("run.x0")}, y{cfg.number("run.y0")};
    const double eta = cfg.number("tolerances.eta");
    const std::int64_t n = cfg.reps;
    std::vector<double> lam(static_cast<std::size_t>(n)), err(static_cast<std::size_t>(n)),
        dist(static_cast<std::size_t>(n));
    parallel_for(n, cfg.workers, [&](std::int64_t r) {
        const NoisePath path = sample_path(ens.kinds, grid, ens.master_seed, static_cast<std::uint64_t>(r));
        LyapunovOptions lo;
        lo.scheme = ens.scheme_for(sys);
        const auto est = lyapunov_spectrum(sys, x, path, lo);
        lam[r] = est.top();
        err[r] = est.std_errors.front();
        dist[r] = std::abs(integrate_final(sys, x, path, lo.scheme)[0] - integrate_final(sys, y, path, lo.scheme)[0]);
    });
    ScenarioOutput out;
    out.attempted = n;
    const double reference = -0.5 * sigma * sigma;
    const auto pooled = mean_stat(lam, "lambda_top");
    out.rows.push_back(make_row(cfg, "lambda_top[sigma]", sigma, pooled,
                                std::abs(pooled.mean - reference) <= 0.05 ? "consistent" : "inconsistent"));
    out.rows.push_back(point_row(cfg, "lambda_reference[sigma]", sigma, reference, 1, "analytic"));
    const auto hits = std::count_if(dist.begin(), dist.end(), [&](double d) { return d <= eta; });
    const auto sync = proportion_stat(hits, n, "sync");
    out.rows.push_back(make_row(cfg, "sync_proportion[sigma]", sigma, sync, sync.ci_low > 0.0 ? "sync" : "no-sync"));
    std::string csv = csv_header("replica,lambda_top,stderr,final_distance");
    for (std::int64_t r = 0; r < n; ++r) {
        csv += fmt::format("{},{},{},{}\n", r, g17(lam[r]), g17(err[r]), g17(dist[r]));
    }
    out.files.emplace_back("lyapunov.csv", std::move(csv));
    return out;
}

ScenarioOutput run_stable_ballmass(const RunConfig& cfg) {
    const auto sigmas = cfg.list("system.sigmas");
    const double alpha = cfg.number("noise.alpha");
    const double R = cfg.number("tolerances.R");
    const double t = cfg.number("run.t");
    const double dt = cfg.number("run.dt");
    const std::int64_t thin = cfg.integer("run.thin");
    const double burn = cfg.number("run.burn_in");
    const std::int64_t keep = steps_in(t - burn, dt);
    if (keep % thin != 0) {
        throw ConfigurationError("run.t - run.burn_in must be a multiple of run.dt * run.thin");
    }
    std::vector<SampleCloud> clouds(sigmas.size());
    parallel_for(static_cast<std::int64_t>(sigmas.size()), cfg.workers, [&](std::int64_t i) {
        const SystemSpec sys = build_system("cubic1d", {{"sigma", sigmas[i]}});
        InvariantOptions o;
        o.dt = dt;
        o.burn_in = burn;
        o.thin = thin;
        o.n_samples = keep / thin;
        o.master_seed = cfg.seed;
        o.stream_id = static_cast<std::uint64_t>(i);
        o.scheme = scheme_of(cfg, sys);
        clouds[i] = sample_invariant(sys, {ChannelKind::stable(alpha)}, o);
    });
    std::size_t next = 0;
    const std::vector<double> center{0.0};
    const auto rows =
        ball_mass_sweep([&](double) { return clouds[next++]; }, sigmas, center, R);
    ScenarioOutput out;
    out.attempted = static_cast<std::int64_t>(sigmas.size());
    bool decreasing = true;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::string v = "-";
        if (i > 0) {
            const bool dec = rows[i].mass.mean < rows[i - 1].mass.mean;
            decreasing = decreasing && dec;
            v = dec ? "decreasing" : "not-decreasing";
        }
        out.rows.push_back(make_row(cfg, "ball_mass[sigma]", rows[i].sigma, rows[i].mass, v));
    }
    if (rows.size() >= 2) {
        const bool separated = rows.back().mass.ci_high < rows.front().mass.ci_low;
        out.rows.push_back(point_row(cfg, "ball_mass_drop[sigma]", rows.back().sigma,
                                     rows.front().mass.mean - rows.back().mass.mean,
                                     static_cast<std::int64_t>(rows.size()),
                                     decreasing && separated ? "decay" : "no-decay"));
    }
    std::ostringstream os;
    write_sweep_csv(os, rows);
    out.files.emplace_back("ballmass.csv", os.str());
    for (std::size_t i = 0; i < clouds.size(); ++i) {
        const auto s = clouds[i].summarize(0);
        std::string q = csv_header("level,quantile");
        for (std::size_t j = 0; j < s.quantiles.size(); ++j) {
            q += fmt::format("{},{}\n", g17(s.quantile_levels[j]), g17(s.quantiles[j]));
        }
        out.files.emplace_back(fmt::format("quantiles_sigma{}.csv", i), std::move(q));
    }
    return out;
}

ScenarioOutput run_traceavg_gradient(const RunConfig& cfg) {
    const double quartic = cfg.number("system.quartic");
    const double quadratic = cfg.number("system.quadratic");
    const double sigma = cfg.number("system.sigma");
    const SystemSpec sys =
        build_system("gradient1d", {{"quartic", quartic}, {"quadratic", quadratic}, {"sigma", sigma}});
    const double dt = cfg.number("run.dt");
    const TimeGrid grid = TimeGrid::over(0.0, cfg.number("run.t"), dt);
    const int batches = static_cast<int>(cfg.integer("run.batches"));
    const std::vector<double> x0{cfg.number("run.x0")};
    const Scheme scheme = scheme_of(cfg, sys);
    ScenarioOutput out;
    out.attempted = cfg.reps;
    std::vector<double> trace(static_cast<std::size_t>(cfg.reps)), trace_se(trace.size()), lsum(trace.size());
    parallel_for(cfg.reps, cfg.workers, [&](std::int64_t r) {
        const NoisePath path = sample_path({ChannelKind::brownian()}, grid, cfg.seed, static_cast<std::uint64_t>(r));
        const Trajectory traj = integrate(sys, x0, path, scheme);
        const auto ta = trace_average(sys, traj, path, batches);
        trace[r] = ta.generator.mean;
        trace_se[r] = ta.generator.std_error;
        LyapunovOptions lo;
        lo.scheme = scheme;
        lo.rule = TangentRule::frozen_exponential;
        lsum[r] = lyapunov_spectrum(sys, x0, path, lo).sum();
    });
    // Reference: stationary density proportional to exp(-2 V / sigma^2).
    const auto density = [&](double x) {
        const double v = quartic * x * x * x * x / 4.0 + quadratic * x * x / 2.0;
        return std::exp(-2.0 * v / (sigma * sigma));
    };
    using boost::math::quadrature::gauss_kronrod;
    const double inf = std::numeric_limits<double>::infinity();
    const double z = gauss_kronrod<double, 61>::integrate(density, -inf, inf, 15, 1e-13);
    const double num = gauss_kronrod<double, 61>::integrate(
        [&](double x) { return (-3.0 * quartic * x * x - quadratic) * density(x); }, -inf, inf, 15, 1e-13);
    const double reference = num / z;

    EnsembleStat pooled;
    if (cfg.reps == 1) {
        pooled = {1, trace[0], trace_se[0], trace[0] - kZ95 * trace_se[0], trace[0] + kZ95 * trace_se[0], "trace"};
    } else {
        pooled = mean_stat(trace, "trace_average");
    }
    const bool match = std::abs(pooled.mean - reference) <= 3.0 * pooled.std_error;
    out.rows.push_back(make_row(cfg, "trace_average[sigma]", sigma, pooled,
                                std::string(match ? "matches-quadrature" : "differs-from-quadrature") +
                                    (pooled.mean < 0.0 ? ";negative" : ";nonnegative")));
    out.rows.push_back(point_row(cfg, "trace_reference[sigma]", sigma, reference, 1, "quadrature"));
    double worst = 0.0;
    for (std::size_t r = 0; r < trace.size(); ++r) {
        worst = std::max(worst, std::abs(lsum[r] - trace[r]) / std::max(1e-300, std::abs(trace[r])));
    }
    out.rows.push_back(point_row(cfg, "exponent_sum_rel_gap[sigma]", sigma, worst, cfg.reps,
                                 worst <= 1e-6 ? "identity-holds" : "identity-fails"));
    std::string csv = csv_header("replica,trace_average,stderr,exponent_sum");
    for (std::size_t r = 0; r < trace.size(); ++r) {
        csv += fmt::format("{},{},{},{}\n", r, g17(trace[r]), g17(trace_se[r]), g17(lsum[r]));
    }
    out.files.emplace_back("trace.csv", std::move(csv));
    return out;
}

/// Two-point runs on a 1D cubic system driven by jump noise: sync proportion
/// for pairs in a ball and log-contraction rates of a fixed pair.
void cubic_pairs(const RunConfig& cfg, const SystemSpec& sys, const EnsembleConfig& ens, ScenarioOutput& out,
                 double param_value) {
    const double t = cfg.number("run.t");
    const double eta = cfg.number("tolerances.eta");
    const double center = cfg.number("run.pair_center");
    const double radius = cfg.number("run.pair_radius");
    const auto sync = sync_probability(sys, PairSource::ball({center}, radius), t, eta, cfg.reps, ens);
    out.attempted += sync.attempted;
    out.blowups += sync.blowups;
    out.rows.push_back(make_row(cfg, "sync_proportion[sigma]", param_value, sync.proportion,
                                sync.proportion.mean >= 0.99 ? "sync" : "no-sync"));

    // Log-contraction rate of the pair (x0, y0) up to the first time the gap
    // falls below the floor.
    const double x0 = cfg.number("run.x0");
    const double y0 = cfg.number("run.y0");
    const double floor = cfg.number("tolerances.gap_floor");
    const double eps = cfg.number("tolerances.trap_eps");
    const double bound = 1.0 - 3.0 * (1.0 - eps) * (1.0 - eps);
    const TimeGrid grid = TimeGrid::over(0.0, t, ens.dt);
    const Scheme scheme = ens.scheme_for(sys);
    std::vector<double> rate(static_cast<std::size_t>(cfg.reps), std::numeric_limits<double>::quiet_NaN());
    std::vector<double> low(rate.size(), std::numeric_limits<double>::infinity());
    parallel_for(cfg.reps, cfg.workers, [&](std::int64_t r) {
        const NoisePath path = sample_path(ens.kinds, grid, ens.master_seed, static_cast<std::uint64_t>(r));
        try {
            const auto a = integrate(sys, std::vector<double>{x0}, path, scheme);
            const auto b = integrate(sys, std::vector<double>{y0}, path, scheme);
            const double d0 = std::abs(y0 - x0);
            for (std::int64_t k = 1; k <= grid.n_steps; ++k) {
                low[r] = std::min({low[r], a.state(k)[0], b.state(k)[0]});
                const double d = std::abs(a.state(k)[0] - b.state(k)[0]);
                if (d < floor || k == grid.n_steps) {
                    rate[r] = std::log(d / d0) / (grid.time(k) - grid.t_start());
                    break;
                }
            }
        } catch (const BlowUpError&) {
        }
    });
    double worst = -std::numeric_limits<double>::infinity();
    double lowest = std::numeric_limits<double>::infinity();
    std::int64_t ok = 0;
    for (std::size_t r = 0; r < rate.size(); ++r) {
        if (!std::isnan(rate[r])) {
            worst = std::max(worst, rate[r]);
            lowest = std::min(lowest, low[r]);
            ++ok;
        }
    }
    const bool in_trap = lowest >= 1.0 - eps;
    out.rows.push_back(point_row(cfg, "max_log_contraction_rate[sigma]", param_value, worst, ok,
                                 worst <= bound && in_trap ? "within-bound" : "bound-violated-or-left-trap"));
    out.rows.push_back(point_row(cfg, "contraction_bound[eps]", eps, bound, 1, "derived"));
    std::string csv = csv_header("replica,log_contraction_rate,min_state");
    for (std::size_t r = 0; r < rate.size(); ++r) {
        csv += fmt::format("{},{},{}\n", r, g17(rate[r]), g17(low[r]));
    }
    out.files.emplace_back("contraction.csv", std::move(csv));
}

ScenarioOutput run_subordinator_doublewell(const RunConfig& cfg) {
    const double sigma = cfg.number("system.sigma");
    const SystemSpec sys = build_system("cubic1d", {{"sigma", sigma}});
    const EnsembleConfig ens = ensemble(cfg, {ChannelKind::subordinator(cfg.number("noise.alpha"))});
    ScenarioOutput out;
    cubic_pairs(cfg, sys, ens, out, sigma);
    return out;
}

ScenarioOutput run_poisson_cubic(const RunConfig& cfg) {
    const double sigma = cfg.number("system.sigma");
    const SystemSpec sys = build_system("cubic1d", {{"sigma", sigma}});
    const EnsembleConfig ens =
        ensemble(cfg, {ChannelKind::poisson(cfg.number("noise.rate"), cfg.number("noise.jump"))});
    ScenarioOutput out;
    const double z = cfg.number("tolerances.z");
    const double R = cfg.number("tolerances.R");
    CertifyOptions co;
    co.h = cfg.number("run.h");
    co.scheme = ens.scheme_for(sys);
    const auto rec = recurrence_probability(sys, std::vector<double>{z}, R, cfg.list("run.t_list"), cfg.reps, co, ens);
    out.attempted += rec.attempted;
    out.blowups += rec.blowups;
    std::string csv = csv_header("t,certified,n,ci_low,ci_high");
    for (std::size_t j = 0; j < rec.t_list.size(); ++j) {
        const auto& s = rec.per_t[j];
        out.rows.push_back(make_row(cfg, "recurrence[t]", rec.t_list[j], s, s.ci_low > 0.0 ? "witness" : "no-witness"));
        csv += fmt::format("{},{},{},{},{}\n", g17(rec.t_list[j]), g17(s.mean), s.n, g17(s.ci_low), g17(s.ci_high));
    }
    out.files.emplace_back("recurrence.csv", std::move(csv));
    cubic_pairs(cfg, sys, ens, out, sigma);
    return out;
}

ScenarioOutput run_degenerate_doublewell(const RunConfig& cfg) {
    const auto d = static_cast<double>(cfg.integer("system.d"));
    const auto nf = static_cast<double>(cfg.integer("system.n"));
    const auto sigmas = cfg.list("system.sigmas");
    const double t = cfg.number("run.t");
    const double eta = cfg.number("tolerances.eta");
    const double min_gap = cfg.number("tolerances.min_distance");
    const auto x = cfg.list("run.x0");
    const auto y = cfg.list("run.y0");
    ScenarioOutput out;
    std::string csv = csv_header("sigma,replica,final_distance");
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        const SystemSpec sys = build_system("doublewell_degenerate", {{"d", d}, {"n", nf}, {"sigma", sigmas[i]}});
        std::vector<ChannelKind> kinds(static_cast<std::size_t>(nf), ChannelKind::brownian());
        // Each sigma gets its own block of streams.
        const EnsembleConfig ens = ensemble(cfg, kinds, static_cast<std::uint64_t>(i) * 1'000'000u);
        const auto res = sync_probability(sys, PairSource::fixed_pair(x, y), t, eta, cfg.reps, ens);
        out.attempted += res.attempted;
        out.blowups += res.blowups;
        out.rows.push_back(make_row(cfg, "sync_proportion[sigma]", sigmas[i], res.proportion,
                                    res.proportion.mean >= 0.95 ? "sync" : "no-sync"));
        double smallest = std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < res.final_distance.size(); ++r) {
            const double v = res.final_distance[r];
            if (!std::isnan(v)) {
                smallest = std::min(smallest, v);
            }
            csv += fmt::format("{},{},{}\n", g17(sigmas[i]), r, g17(v));
        }
        out.rows.push_back(point_row(cfg, "min_final_distance[sigma]", sigmas[i], smallest,
                                     res.attempted - res.blowups,
                                     smallest >= min_gap ? "no-weak-sync-witness" : "gap-closed"));
    }
    out.files.emplace_back("distances.csv", std::move(csv));
    return out;
}

double lorenz_threshold(double rho, double beta) {
    return (1.0 - rho) * std::sqrt(std::numbers::pi * beta);
}

ScenarioOutput run_lorenz_gamma_sweep(const RunConfig& cfg) {
    const double sigma = cfg.number("system.sigma");
    const double rho = cfg.number("system.rho");
    const double beta = cfg.number("system.beta");
    const auto gammas = cfg.list("system.gammas");
    const double t = cfg.number("run.t");
    const double eta = cfg.number("tolerances.eta");
    const double radius = cfg.number("run.pair_radius");
    const double lyap_t = cfg.number("run.lyap_t");
    const std::int64_t lyap_reps = cfg.integer("run.lyap_reps");
    const double threshold = lorenz_threshold(rho, beta);
    ScenarioOutput out;
    std::string csv = csv_header("gamma,replica,final_distance");
    std::string lcsv = csv_header("gamma,replica,lambda_top");
    out.rows.push_back(point_row(cfg, "threshold[rho]", rho, threshold, 1, "(1-rho)sqrt(pi beta)"));
    for (std::size_t i = 0; i < gammas.size(); ++i) {
        const double g = gammas[i];
        const SystemSpec sys = build_system("lorenz63", {{"sigma", sigma}, {"rho", rho}, {"beta", beta}, {"gamma", g}});
        const EnsembleConfig ens = ensemble(cfg, {ChannelKind::brownian()}, static_cast<std::uint64_t>(i) * 1'000'000u);
        const std::string side = std::abs(g) < threshold ? "below-threshold" : "above-threshold";
        const auto res = sync_probability(sys, PairSource::ball({0.0, 0.0, 0.0}, radius), t, eta, cfg.reps, ens);
        out.attempted += res.attempted;
        out.blowups += res.blowups;
        out.rows.push_back(make_row(cfg, "sync_proportion[gamma]", g, res.proportion,
                                    side + (res.proportion.mean >= 0.99 ? ";sync" : ";no-sync")));
        for (std::size_t r = 0; r < res.final_distance.size(); ++r) {
            csv += fmt::format("{},{},{}\n", g17(g), r, g17(res.final_distance[r]));
        }
        const TimeGrid grid = TimeGrid::over(0.0, lyap_t, ens.dt);
        std::vector<double> lam(static_cast<std::size_t>(lyap_reps), std::numeric_limits<double>::quiet_NaN());
        parallel_for(lyap_reps, cfg.workers, [&](std::int64_t r) {
            const std::uint64_t stream = ens.first_stream + 500'000u + static_cast<std::uint64_t>(r);
            const NoisePath path = sample_path(ens.kinds, grid, cfg.seed, stream);
            rng::Cursor cur(rng::Stream(cfg.seed, static_cast<std::uint32_t>(stream),
                                        rng::substream(0, rng::Purpose::initial_condition)));
            const auto x0 = uniform_in_ball(std::vector<double>{0.0, 0.0, 0.0}, radius, cur);
            LyapunovOptions lo;
            lo.scheme = ens.scheme_for(sys);
            try {
                lam[r] = lyapunov_spectrum(sys, x0, path, lo).top();
            } catch (const BlowUpError&) {
            }
        });
        std::vector<double> ok;
        for (std::size_t r = 0; r < lam.size(); ++r) {
            lcsv += fmt::format("{},{},{}\n", g17(g), r, g17(lam[r]));
            if (!std::isnan(lam[r])) {
                ok.push_back(lam[r]);
            }
        }
        out.attempted += lyap_reps;
        out.blowups += lyap_reps - static_cast<std::int64_t>(ok.size());
        if (!ok.empty()) {
            const auto s = mean_stat(ok, "lambda_top");
            out.rows.push_back(make_row(cfg, "lambda_top[gamma]", g, s,
                                        side + (s.ci_high < 0.0 ? ";contracting" : ";not-contracting")));
        }
    }
    out.files.emplace_back("sync.csv", std::move(csv));
    out.files.emplace_back("lyapunov.csv", std::move(lcsv));
    return out;
}

ScenarioOutput run_lorenz_absorbing(const RunConfig& cfg) {
    const double sigma = cfg.number("system.sigma");
    const double rho = cfg.number("system.rho");
    const double beta = cfg.number("system.beta");
    const double lambda = cfg.number("system.lambda") > 0.0 ? cfg.number("system.lambda") : beta;
    const double gmax = cfg.number("run.gamma_max");
    const double radius = cfg.number("run.x0_radius");
    const TimeGrid grid = TimeGrid::over(0.0, cfg.number("run.t"), cfg.number("run.dt"));
    struct Res {
        double gamma = 0.0;
        AbsorbingReport rep;
        bool blown = false;
    };
    std::vector<Res> res(static_cast<std::size_t>(cfg.reps));
    parallel_for(cfg.reps, cfg.workers, [&](std::int64_t r) {
        const auto stream = static_cast<std::uint32_t>(r);
        rng::Cursor cur(rng::Stream(cfg.seed, stream, rng::substream(0, rng::Purpose::initial_condition)));
        const double g = gmax * cur.uniform();
        const auto x0 = uniform_in_ball(std::vector<double>{0.0, 0.0, 0.0}, radius, cur);
        res[r].gamma = g;
        const NoisePath path = sample_path({ChannelKind::brownian()}, grid, cfg.seed, stream);
        const OUPath ou = ou_from_path(path, 0, lambda, g);
        const SystemSpec sys =
            build_system("lorenz63_conjugated",
                         {{"sigma", sigma}, {"rho", rho}, {"beta", beta}, {"gamma", g}, {"lambda", lambda}})
                .with_aux(ou);
        try {
            const Trajectory traj = integrate(sys, x0, path, Scheme::euler_maruyama);
            res[r].rep = lorenz_absorbing_check(traj, ou, rho, sigma, beta, lambda);
        } catch (const BlowUpError&) {
            res[r].blown = true;
        }
    });
    ScenarioOutput out;
    out.attempted = cfg.reps;
    std::int64_t violations = 0;
    double worst = -std::numeric_limits<double>::infinity();
    std::string csv = csv_header("replica,gamma,violations,max_margin,tol,max_L,max_O2");
    for (std::size_t r = 0; r < res.size(); ++r) {
        if (res[r].blown) {
            ++out.blowups;
            csv += fmt::format("{},{},nan,nan,nan,nan,nan\n", r, g17(res[r].gamma));
            continue;
        }
        const auto& a = res[r].rep;
        violations += a.violations;
        worst = std::max(worst, a.max_margin - a.tol);
        csv += fmt::format("{},{},{},{},{},{},{}\n", r, g17(res[r].gamma), a.violations, g17(a.max_margin),
                           g17(a.tol), g17(a.max_L), g17(a.max_O2));
    }
    out.rows.push_back(point_row(cfg, "violations[gamma_max]", gmax, static_cast<double>(violations),
                                 cfg.reps - out.blowups, violations == 0 ? "inequality-holds" : "violated"));
    out.rows.push_back(point_row(cfg, "worst_margin_minus_tol[gamma_max]", gmax, worst, cfg.reps - out.blowups,
                                 worst <= 0.0 ? "inequality-holds" : "violated"));
    out.rows.push_back(point_row(cfg, "K[sigma]", sigma, lorenz_k(sigma, beta), 1, "min{sigma,beta/2,2}"));
    out.files.emplace_back("absorbing.csv", std::move(csv));
    return out;
}

ScenarioOutput run_lorenz_recurrence(const RunConfig& cfg) {
    const double sigma = cfg.number("system.sigma");
    const SystemSpec sys = build_system("lorenz63", {{"sigma", sigma},
                                                     {"rho", cfg.number("system.rho")},
                                                     {"beta", cfg.number("system.beta")},
                                                     {"gamma", cfg.number("system.gamma")}});
    const EnsembleConfig ens = ensemble(cfg, {ChannelKind::brownian()});
    CertifyOptions co;
    co.h = cfg.number("run.h");
    co.refine_depth = static_cast<int>(cfg.integer("run.refine"));
    co.weights = weights_or_empty(cfg, "run.weights", 3);
    co.scheme = ens.scheme_for(sys);
    const double R = cfg.number("tolerances.R");
    const auto rec =
        recurrence_probability(sys, std::vector<double>{0.0, 0.0, 0.0}, R, cfg.list("run.t_list"), cfg.reps, co, ens);
    ScenarioOutput out;
    out.attempted = rec.attempted;
    out.blowups = rec.blowups;
    std::string csv = csv_header("t,certified,n,ci_low,ci_high");
    for (std::size_t j = 0; j < rec.t_list.size(); ++j) {
        const auto& s = rec.per_t[j];
        out.rows.push_back(make_row(cfg, "recurrence[t]", rec.t_list[j], s, s.ci_low > 0.0 ? "witness" : "no-witness"));
        csv += fmt::format("{},{},{},{},{}\n", g17(rec.t_list[j]), g17(s.mean), s.n, g17(s.ci_low), g17(s.ci_high));
    }
    out.rows.push_back(point_row(cfg, "mesh_points[R]", R, static_cast<double>(rec.n_mesh), rec.attempted,
                                 rec.best_stat().ci_low > 0.0 ? "recurrent-witness" : "no-witness"));
    out.files.emplace_back("recurrence.csv", std::move(csv));
    return out;
}

ScenarioOutput run_lorenz_threshold_stats(const RunConfig& cfg) {
    const double rho = cfg.number("system.rho");
    const double beta = cfg.number("system.beta");
    const auto gammas = cfg.list("system.gammas");
    const TimeGrid grid = TimeGrid::over(0.0, cfg.number("run.t"), cfg.number("run.dt"));
    const std::int64_t batches = cfg.integer("run.batches");
    ScenarioOutput out;
    out.attempted = static_cast<std::int64_t>(gammas.size());
    std::vector<EnsembleStat> avg(gammas.size());
    parallel_for(static_cast<std::int64_t>(gammas.size()), cfg.workers, [&](std::int64_t i) {
        const OUPath ou = ou_stationary(grid, beta, gammas[i], cfg.seed, static_cast<std::uint64_t>(i));
        std::vector<double> series(ou.values.size());
        for (std::size_t k = 0; k < series.size(); ++k) {
            series[k] = std::abs(rho + 1.0 - ou.values[k]) - 2.0;
        }
        avg[i] = ergodic_average(series, static_cast<std::int64_t>(series.size()) / batches);
    });
    std::string csv = csv_header("gamma,time_average,stderr,exact,closed_form_bound");
    for (std::size_t i = 0; i < gammas.size(); ++i) {
        const double g = gammas[i];
        const double s = std::abs(g) / std::sqrt(2.0 * beta);
        const double exact = folded_normal_mean(rho + 1.0, s) - 2.0;
        const double bound = rho - 1.0 + std::sqrt(g * g / (std::numbers::pi * beta));
        const bool match = std::abs(avg[i].mean - exact) <= 3.0 * avg[i].std_error;
        out.rows.push_back(make_row(cfg, "time_average[gamma]", g, avg[i], match ? "matches-exact" : "differs"));
        out.rows.push_back(point_row(cfg, "exact[gamma]", g, exact, 1, "folded-normal"));
        out.rows.push_back(point_row(cfg, "bound[gamma]", g, bound, 1, bound >= exact ? "upper-bound" : "not-a-bound"));
        csv += fmt::format("{},{},{},{},{}\n", g17(g), g17(avg[i].mean), g17(avg[i].std_error), g17(exact), g17(bound));
    }
    out.files.emplace_back("threshold.csv", std::move(csv));
    return out;
}

std::vector<Setting> common(std::vector<Setting> s) {
    s.push_back({"run.scheme", T::text, "auto", "euler_maruyama, tamed_euler or auto (tamed for cubic drifts)"});
    s.push_back({"tolerances.failure_budget", T::number, "0.01", "largest tolerated blow-up fraction"});
    return s;
}

std::vector<Scenario> build_registry() {
    std::vector<Scenario> r;
    r.push_back({"gbm-sync", "linear multiplicative noise dX = X dW: attractor {0}",
                 "top Lyapunov exponent and pair synchronization of geometric Brownian motion", 20,
                 common({{"system.sigma", T::number, "1", "noise intensity"},
                         {"run.t", T::number, "200", "horizon"},
                         {"run.dt", T::number, "0.001", "step"},
                         {"run.x0", T::number, "1", "first initial condition"},
                         {"run.y0", T::number, "2", "second initial condition"},
                         {"tolerances.eta", T::number, "1e-6", "synchronization distance"}}),
                 run_gbm_sync});
    r.push_back({"stable-ballmass", "alpha-stable forcing: rho(B_R) -> 0 as sigma grows",
                 "invariant ball mass of the cubic drift under stable noise across sigma", 1,
                 common({{"system.sigmas", T::list, "1,2,4,8", "noise intensities"},
                         {"noise.alpha", T::number, "1.5", "stable index"},
                         {"run.t", T::number, "5000", "horizon per chain"},
                         {"run.burn_in", T::number, "1000", "discarded initial time"},
                         {"run.dt", T::number, "0.01", "step"},
                         {"run.thin", T::integer, "10", "steps between samples"},
                         {"tolerances.R", T::number, "1", "ball radius around 0"}}),
                 run_stable_ballmass});
    r.push_back({"traceavg-gradient", "gradient drift: exponent sum equals the average of trace Db",
                 "trace average of the double-well gradient system against quadrature", 1,
                 common({{"system.quartic", T::number, "1", "V = quartic x^4/4 + quadratic x^2/2"},
                         {"system.quadratic", T::number, "-1", "see system.quartic"},
                         {"system.sigma", T::number, "1", "noise intensity"},
                         {"run.t", T::number, "2000", "horizon"},
                         {"run.dt", T::number, "0.002", "step"},
                         {"run.x0", T::number, "0", "initial condition"},
                         {"run.batches", T::integer, "20", "batch-means batches"}}),
                 run_traceavg_gradient});
    r.push_back({"subordinator-doublewell", "subordinator forcing: stability on B(1, 1/4)",
                 "pair synchronization of the cubic drift near x=1 under a stable subordinator", 200,
                 common({{"system.sigma", T::number, "1", "noise intensity"},
                         {"noise.alpha", T::number, "0.9", "subordinator index"},
                         {"run.t", T::number, "40", "horizon"},
                         {"run.dt", T::number, "0.01", "step"},
                         {"run.pair_center", T::number, "1", "pair ball center"},
                         {"run.pair_radius", T::number, "0.25", "pair ball radius"},
                         {"run.x0", T::number, "0.75", "contraction pair, first point"},
                         {"run.y0", T::number, "1.25", "contraction pair, second point"},
                         {"tolerances.eta", T::number, "1e-6", "synchronization distance"},
                         {"tolerances.gap_floor", T::number, "1e-12", "gap at which rates are read off"},
                         {"tolerances.trap_eps", T::number, "0.25", "trap region [1 - eps, inf)"}}),
                 run_subordinator_doublewell});
    r.push_back({"poisson-cubic", "Poisson-driven cubic SDE: synchronization",
                 "recurrence at z=1 and pair synchronization of the cubic drift with Poisson jumps", 200,
                 common({{"system.sigma", T::number, "1", "noise intensity"},
                         {"noise.rate", T::number, "1", "Poisson intensity"},
                         {"noise.jump", T::number, "1", "jump size"},
                         {"run.t", T::number, "40", "pair horizon"},
                         {"run.dt", T::number, "0.01", "step"},
                         {"run.t_list", T::list, "1,2,3,4,5,6,7,8,9,10", "recurrence times"},
                         {"run.h", T::number, "0.01", "mesh spacing (unused when monotone)"},
                         {"run.pair_center", T::number, "1", "pair ball center"},
                         {"run.pair_radius", T::number, "0.25", "pair ball radius"},
                         {"run.x0", T::number, "0.75", "contraction pair, first point"},
                         {"run.y0", T::number, "1.25", "contraction pair, second point"},
                         {"tolerances.z", T::number, "1", "recurrence center"},
                         {"tolerances.R", T::number, "0.5", "recurrence radius"},
                         {"tolerances.eta", T::number, "1e-6", "synchronization distance"},
                         {"tolerances.gap_floor", T::number, "1e-12", "gap at which rates are read off"},
                         {"tolerances.trap_eps", T::number, "0.25", "trap region [1 - eps, inf)"}}),
                 run_poisson_cubic});
    r.push_back({"degenerate-doublewell", "double well with degenerate additive noise: dichotomy in sigma",
                 "cross-half-space pair distances of the degenerate double well", 200,
                 common({{"system.d", T::integer, "2", "dimension"},
                         {"system.n", T::integer, "1", "forced coordinates"},
                         {"system.sigmas", T::list, "0.25,2", "noise intensities"},
                         {"run.t", T::number, "100", "horizon"},
                         {"run.dt", T::number, "0.01", "step"},
                         {"run.x0", T::list, "0,0.5", "first point"},
                         {"run.y0", T::list, "0,-0.5", "second point"},
                         {"tolerances.eta", T::number, "1e-6", "synchronization distance"},
                         {"tolerances.min_distance", T::number, "0.1", "separation witness level"}}),
                 run_degenerate_doublewell});
    r.push_back({"lorenz-gamma-sweep", "Lorenz with additive noise: synchronization if |gamma| < (1-rho)sqrt(pi beta)",
                 "sync proportions and top exponents of the noisy Lorenz system across gamma", 200,
                 common({{"system.sigma", T::number, "10", "Prandtl number"},
                         {"system.rho", T::number, "0.5", "Rayleigh number"},
                         {"system.beta", T::number, "2.6666666666666665", "geometric factor"},
                         {"system.gammas", T::list, "0.25,0.5,1,1.4,2,4,8", "noise intensities"},
                         {"run.t", T::number, "50", "pair horizon"},
                         {"run.dt", T::number, "0.01", "step"},
                         {"run.pair_radius", T::number, "10", "pairs uniform in B(0, radius)"},
                         {"run.lyap_t", T::number, "200", "Lyapunov horizon"},
                         {"run.lyap_reps", T::integer, "10", "Lyapunov replicas per gamma"},
                         {"tolerances.eta", T::number, "1e-6", "synchronization distance"}}),
                 run_lorenz_gamma_sweep});
    r.push_back({"lorenz-absorbing", "conjugated Lorenz: absorbing-set differential inequality",
                 "discrete check of the Lyapunov-functional inequality over random gamma", 100,
                 common({{"system.sigma", T::number, "10", "Prandtl number"},
                         {"system.rho", T::number, "0.5", "Rayleigh number"},
                         {"system.beta", T::number, "2.6666666666666665", "geometric factor"},
                         {"system.lambda", T::number, "0", "OU rate; 0 means beta"},
                         {"run.gamma_max", T::number, "2", "gamma uniform in [0, gamma_max]"},
                         {"run.x0_radius", T::number, "10", "initial conditions uniform in B(0, radius)"},
                         {"run.t", T::number, "20", "horizon"},
                         {"run.dt", T::number, "0.001", "step"}}),
                 run_lorenz_absorbing});
    r.push_back({"lorenz-recurrence", "noisy Lorenz: strong recurrence at the origin",
                 "certified ball-image recurrence of B(0, R) in the weighted metric", 400,
                 common({{"system.sigma", T::number, "10", "Prandtl number"},
                         {"system.rho", T::number, "0.5", "Rayleigh number"},
                         {"system.beta", T::number, "2.6666666666666665", "geometric factor"},
                         {"system.gamma", T::number, "0.5", "noise intensity"},
                         {"run.t_list", T::list, "1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16,17,18,19,20", "times"},
                         {"run.dt", T::number, "0.01", "step"},
                         {"run.h", T::number, "1", "mesh spacing in scaled coordinates"},
                         {"run.refine", T::integer, "2", "mesh refinement levels"},
                         {"run.weights", T::list, "0.1,1,1", "metric weights"},
                         {"tolerances.R", T::number, "5", "ball radius"}}),
                 run_lorenz_recurrence});
    r.push_back({"lorenz-threshold-stats", "threshold statistic E|rho+1-O| - 2 against (1-rho)sqrt(pi beta)",
                 "OU time averages against the exact folded-normal value and the closed-form bound", 1,
                 common({{"system.rho", T::number, "0.5", "Rayleigh number"},
                         {"system.beta", T::number, "2.6666666666666665", "OU rate"},
                         {"system.gammas", T::list, "0.5,1,1.4", "noise intensities"},
                         {"run.t", T::number, "5000", "horizon"},
                         {"run.dt", T::number, "0.01", "step"},
                         {"run.batches", T::integer, "20", "batch-means batches"}}),
                 run_lorenz_threshold_stats});
    return r;
}

void check_type(const Setting& s, const std::string& raw) {
    switch (s.type) {
        case T::number:
            parse_number(s.key, raw);
            break;
        case T::integer:
            parse_integer(s.key, raw);
            break;
        case T::list:
            parse_list(s.key, raw);
            break;
        case T::text:
            break;
    }
}

}  // namespace

// ------------------------------------------------------------- RunConfig

double RunConfig::number(const std::string& key) const {
    return parse_number(key, text(key));
}

std::int64_t RunConfig::integer(const std::string& key) const {
    return parse_integer(key, text(key));
}

std::vector<double> RunConfig::list(const std::string& key) const {
    return parse_list(key, text(key));
}

const std::string& RunConfig::text(const std::string& key) const {
    const auto it = values.find(key);
    if (it == values.end()) {
        throw ConfigurationError(fmt::format("scenario {} has no setting '{}'", scenario, key));
    }
    return it->second;
}

const std::vector<Scenario>& scenarios() {
    static const std::vector<Scenario> registry = build_registry();
    return registry;
}

const Scenario& find_scenario(const std::string& name) {
    for (const auto& s : scenarios()) {
        if (s.name == name) {
            return s;
        }
    }
    std::string names;
    for (const auto& s : scenarios()) {
        names += (names.empty() ? "" : ", ") + s.name;
    }
    throw ConfigurationError(fmt::format("unknown scenario '{}'; valid scenarios: {}", name, names));
}

RunConfig resolve_config(const ExperimentConfig& config) {
    if (!config.scenario) {
        throw ConfigurationError("no scenario given");
    }
    const Scenario& sc = find_scenario(*config.scenario);
    RunConfig rc;
    rc.scenario = sc.name;
    rc.seed = config.seed.value_or(1);
    rc.reps = config.reps.value_or(sc.default_reps);
    rc.workers = config.workers.value_or(1);
    rc.out = config.out.value_or("rds-lab-out");
    if (rc.reps < 1) {
        throw ConfigurationError("reps must be at least 1");
    }
    if (rc.workers < 1) {
        throw ConfigurationError("workers must be at least 1");
    }
    for (const auto& s : sc.settings) {
        rc.values[s.key] = s.value;
    }
    for (const auto& [k, v] : config.values) {
        const auto it = std::find_if(sc.settings.begin(), sc.settings.end(), [&](const Setting& s) { return s.key == k; });
        if (it == sc.settings.end()) {
            std::string keys;
            for (const auto& s : sc.settings) {
                keys += (keys.empty() ? "" : ", ") + s.key;
            }
            throw ConfigurationError(fmt::format("scenario {} has no setting '{}'; settings: {}", sc.name, k, keys));
        }
        rc.values[k] = v;
    }
    for (const auto& s : sc.settings) {
        check_type(s, rc.values[s.key]);
    }
    if (!(rc.number("run.dt") > 0.0)) {
        throw ConfigurationError("run.dt must be positive");
    }
    const auto& scheme = rc.text("run.scheme");
    if (scheme != "auto") {
        parse_scheme(scheme);
    }
    return rc;
}

std::string effective_config_text(const RunConfig& config) {
    std::string s = fmt::format("scenario = {}\nseed = {}\nreps = {}\nworkers = {}\nout = {}\n", config.scenario,
                                config.seed, config.reps, config.workers, config.out);
    for (const auto& section : config_sections()) {
        bool header = false;
        for (const auto& [k, v] : config.values) {
            if (k.rfind(section + ".", 0) != 0) {
                continue;
            }
            if (!header) {
                s += fmt::format("\n[{}]\n", section);
                header = true;
            }
            s += fmt::format("{} = {}\n", k.substr(section.size() + 1), v);
        }
    }
    return s;
}

ScenarioOutput run_scenario(const RunConfig& config) {
    return find_scenario(config.scenario).run(config);
}

std::string summary_csv(const std::vector<SummaryRow>& rows) {
    std::string s = csv_header("scenario,param,value,estimate,stderr,ci_low,ci_high,n,verdict");
    for (const auto& r : rows) {
        s += fmt::format("{},{},{},{},{},{},{},{},{}\n", r.scenario, r.param, g17(r.value), g17(r.estimate),
                         g17(r.stderr_), g17(r.ci_low), g17(r.ci_high), r.n, r.verdict);
    }
    return s;
}

ExperimentResult run_experiment(const ExperimentConfig& config, bool write_files) {
    ExperimentResult res;
    RunConfig rc;
    try {
        rc = resolve_config(config);
    } catch (const ConfigurationError& e) {
        res.exit_code = 2;
        res.message = e.what();
        return res;
    } catch (const ParseError& e) {
        res.exit_code = 2;
        res.message = e.what();
        return res;
    }
    try {
        res.output = run_scenario(rc);
    } catch (const BlowUpError& e) {
        res.exit_code = 3;
        res.message = e.what();
        return res;
    } catch (const ConfigurationError& e) {
        res.exit_code = 2;
        res.message = e.what();
        return res;
    } catch (const ParameterError& e) {
        res.exit_code = 2;
        res.message = e.what();
        return res;
    } catch (const GridError& e) {
        res.exit_code = 2;
        res.message = e.what();
        return res;
    }
    if (write_files) {
        namespace fs = std::filesystem;
        fs::create_directories(rc.out);
        auto dump = [&](const std::string& name, const std::string& content) {
            std::ofstream f(fs::path(rc.out) / name, std::ios::binary);
            f << content;
            if (!f) {
                throw Error(fmt::format("cannot write {}", (fs::path(rc.out) / name).string()));
            }
        };
        dump("summary.csv", summary_csv(res.output.rows));
        for (const auto& [name, content] : res.output.files) {
            dump(name, content);
        }
        dump("effective.cfg", effective_config_text(rc));
    }
    const double budget = rc.number("tolerances.failure_budget");
    const auto& o = res.output;
    if (o.attempted > 0 && static_cast<double>(o.blowups) > budget * static_cast<double>(o.attempted)) {
        res.exit_code = 3;
        res.message = fmt::format("{} of {} replicas blew up (budget {})", o.blowups, o.attempted, budget);
        return res;
    }
    res.message = fmt::format("{}: {} summary rows, {} blow-ups in {} replicas", rc.scenario, o.rows.size(),
                              o.blowups, o.attempted);
    return res;
}

}  // namespace rdslab
