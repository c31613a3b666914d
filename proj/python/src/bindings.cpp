#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rdslab/config.hpp"
#include "rdslab/errors.hpp"
#include "rdslab/integrate.hpp"
#include "rdslab/measures.hpp"
#include "rdslab/noise.hpp"
#include "rdslab/rds.hpp"
#include "rdslab/scenarios.hpp"
#include "rdslab/systems.hpp"

namespace py = pybind11;
using namespace rdslab;

namespace {

py::array_t<double> as_array(const std::vector<double>& v, py::ssize_t rows, py::ssize_t cols) {
    py::array_t<double> a({rows, cols});
    std::copy(v.begin(), v.end(), a.mutable_data());
    return a;
}

std::optional<Scheme> scheme_arg(const std::optional<std::string>& s) {
    if (!s) {
        return std::nullopt;
    }
    return parse_scheme(*s);
}

py::dict stat_dict(const EnsembleStat& s) {
    py::dict d;
    d["n"] = s.n;
    d["mean"] = s.mean;
    d["std_error"] = s.std_error;
    d["ci_low"] = s.ci_low;
    d["ci_high"] = s.ci_high;
    return d;
}

EnsembleConfig ensemble(std::vector<ChannelKind> kinds, double dt, std::uint64_t seed, int workers,
                        const std::optional<std::string>& scheme) {
    EnsembleConfig c;
    c.kinds = std::move(kinds);
    c.dt = dt;
    c.master_seed = seed;
    c.workers = workers;
    c.scheme = scheme_arg(scheme);
    return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Random dynamical systems lab: noise paths, integrators and synchronization diagnostics.";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ParameterError>(m, "ParameterError", base.ptr());
    py::register_exception<ConfigurationError>(m, "ConfigurationError", base.ptr());
    py::register_exception<GridError>(m, "GridError", base.ptr());
    py::register_exception<BlowUpError>(m, "BlowUpError", base.ptr());
    py::register_exception<BudgetError>(m, "BudgetError", base.ptr());
    py::register_exception<ParseError>(m, "ParseError", base.ptr());

    py::class_<ChannelKind>(m, "ChannelKind")
        .def_static("brownian", &ChannelKind::brownian)
        .def_static("stable", &ChannelKind::stable, py::arg("alpha"), py::arg("group") = -1)
        .def_static("poisson", &ChannelKind::poisson, py::arg("rate"), py::arg("jump") = 1.0)
        .def_static("subordinator", &ChannelKind::subordinator, py::arg("alpha"))
        .def_static("zero", &ChannelKind::zero)
        .def("__repr__", [](const ChannelKind& k) {
            switch (k.type) {
                case ChannelKind::Type::brownian:
                    return std::string("ChannelKind.brownian()");
                case ChannelKind::Type::stable:
                    return "ChannelKind.stable(" + std::to_string(k.alpha) + ")";
                case ChannelKind::Type::poisson:
                    return "ChannelKind.poisson(" + std::to_string(k.rate) + ")";
                case ChannelKind::Type::subordinator:
                    return "ChannelKind.subordinator(" + std::to_string(k.alpha) + ")";
                case ChannelKind::Type::zero:
                    break;
            }
            return std::string("ChannelKind.zero()");
        });

    py::class_<TimeGrid>(m, "TimeGrid")
        .def_static("over", &TimeGrid::over, py::arg("t_start"), py::arg("horizon"), py::arg("dt"))
        .def_readonly("dt", &TimeGrid::dt)
        .def_readonly("n_steps", &TimeGrid::n_steps)
        .def_property_readonly("t_start", &TimeGrid::t_start)
        .def_property_readonly("t_end", &TimeGrid::t_end)
        .def("times", [](const TimeGrid& g) {
            std::vector<double> t(static_cast<std::size_t>(g.n_points()));
            for (std::int64_t k = 0; k < g.n_points(); ++k) {
                t[k] = g.time(k);
            }
            return as_array(t, g.n_points(), 1).reshape({g.n_points()});
        });

    py::class_<NoisePath>(m, "NoisePath")
        .def_property_readonly("grid", &NoisePath::grid)
        .def_property_readonly("channels", &NoisePath::channels)
        .def_property_readonly("n_steps", &NoisePath::n_steps)
        .def("values", [](const NoisePath& p) { return as_array(p.values(), p.n_steps() + 1, p.channels()); })
        .def("increments",
             [](const NoisePath& p) {
                 std::vector<double> v;
                 v.reserve(static_cast<std::size_t>(p.n_steps() * p.channels()));
                 for (std::int64_t k = 0; k < p.n_steps(); ++k) {
                     const auto inc = p.increment(k);
                     v.insert(v.end(), inc.begin(), inc.end());
                 }
                 return as_array(v, p.n_steps(), p.channels());
             })
        .def("fingerprint", &NoisePath::fingerprint)
        .def("slice", &NoisePath::slice, py::arg("k"), py::arg("length"))
        .def("shift", [](const NoisePath& p, std::int64_t k) { return shift_path(p, k); }, py::arg("k"))
        .def("same_increments", &NoisePath::same_increments);

    m.def("sample_path",
          [](const std::vector<ChannelKind>& kinds, double horizon, double dt, std::uint64_t seed,
             std::uint64_t stream) { return sample_path(kinds, TimeGrid::over(0.0, horizon, dt), seed, stream); },
          py::arg("kinds"), py::arg("horizon"), py::arg("dt"), py::arg("seed") = 1, py::arg("stream") = 0);
    m.def("sample_two_sided", &sample_two_sided, py::arg("kinds"), py::arg("t_past"), py::arg("t_future"),
          py::arg("dt"), py::arg("seed") = 1, py::arg("stream") = 0);

    py::class_<SystemSpec>(m, "System")
        .def_property_readonly("name", &SystemSpec::name)
        .def_property_readonly("dim", &SystemSpec::dim)
        .def_property_readonly("noise_channels", &SystemSpec::noise_channels)
        .def_property_readonly("params", &SystemSpec::params)
        .def("drift", [](const SystemSpec& s, const std::vector<double>& x,
                         double t) { return s.drift(t, x); }, py::arg("x"), py::arg("t") = 0.0)
        .def("jacobian",
             [](const SystemSpec& s, const std::vector<double>& x, double t) {
                 return as_array(s.jacobian(t, x), s.dim(), s.dim());
             },
             py::arg("x"), py::arg("t") = 0.0);
    m.def("build_system", &build_system, py::arg("name"), py::arg("params") = ParamMap{});
    m.def("system_names", &system_names);

    m.def("integrate",
          [](const SystemSpec& s, const std::vector<double>& x0, const NoisePath& path,
             const std::optional<std::string>& scheme) {
              const auto bound = bind_path(s, path);
              const auto tr = integrate(bound, x0, path, scheme ? parse_scheme(*scheme) : default_scheme(s));
              return as_array(tr.states, tr.grid.n_points(), tr.dim);
          },
          py::arg("system"), py::arg("x0"), py::arg("path"), py::arg("scheme") = py::none(),
          "States on every grid point, shape (n_steps + 1, dim).");

    m.def("lyapunov_spectrum",
          [](const SystemSpec& s, const std::vector<double>& x0, const NoisePath& path, int k,
             const std::string& rule, const std::optional<std::string>& scheme) {
              LyapunovOptions o;
              o.k = k;
              o.rule = rule == "frozen_exponential" ? TangentRule::frozen_exponential : TangentRule::scheme_jacobian;
              o.scheme = scheme ? parse_scheme(*scheme) : default_scheme(s);
              const auto est = lyapunov_spectrum(bind_path(s, path), x0, path, o);
              py::dict d;
              d["exponents"] = est.exponents;
              d["std_errors"] = est.std_errors;
              d["sum"] = est.sum();
              return d;
          },
          py::arg("system"), py::arg("x0"), py::arg("path"), py::arg("k") = 1, py::arg("rule") = "scheme_jacobian",
          py::arg("scheme") = py::none());

    m.def("two_point_distance",
          [](const SystemSpec& s, const std::vector<double>& x, const std::vector<double>& y, const NoisePath& path,
             const std::optional<std::string>& scheme) {
              const auto ds = two_point_run(bind_path(s, path), x, y, path,
                                            scheme ? parse_scheme(*scheme) : default_scheme(s));
              return ds.distance;
          },
          py::arg("system"), py::arg("x"), py::arg("y"), py::arg("path"), py::arg("scheme") = py::none());

    m.def("sync_probability",
          [](const SystemSpec& s, const std::vector<double>& x, const std::vector<double>& y, double t, double eta,
             std::int64_t reps, const std::vector<ChannelKind>& kinds, double dt, std::uint64_t seed, int workers,
             const std::optional<std::string>& scheme) {
              const auto res = sync_probability(s, PairSource::fixed_pair(x, y), t, eta, reps,
                                                ensemble(kinds, dt, seed, workers, scheme));
              auto d = stat_dict(res.proportion);
              d["blowups"] = res.blowups;
              d["final_distance"] = res.final_distance;
              return d;
          },
          py::arg("system"), py::arg("x"), py::arg("y"), py::arg("t"), py::arg("eta"), py::arg("reps"),
          py::arg("kinds"), py::arg("dt") = 0.01, py::arg("seed") = 1, py::arg("workers") = 1,
          py::arg("scheme") = py::none());

    m.def("certify_ball_image",
          [](const SystemSpec& s, const std::vector<double>& z, double R, const NoisePath& path, double t,
             double target_radius, double h, const std::vector<double>& weights) {
              CertifyOptions o;
              o.target_radius = target_radius;
              o.h = h;
              o.weights = weights;
              const auto c = certify_ball_image(bind_path(s, path), z, R, path, t, o);
              py::dict d;
              d["certified"] = c.certified;
              d["worst_distance"] = c.worst_distance;
              d["tube_radius"] = c.tube_radius;
              d["slack"] = c.slack;
              d["n_mesh"] = c.n_mesh;
              d["monotone"] = c.monotone;
              d["note"] = c.note;
              return d;
          },
          py::arg("system"), py::arg("z"), py::arg("R"), py::arg("path"), py::arg("t"), py::arg("target_radius"),
          py::arg("h") = 0.1, py::arg("weights") = std::vector<double>{});

    m.def("folded_normal_mean", &folded_normal_mean, py::arg("c"), py::arg("s"));

    m.def("scenario_names", [] {
        std::vector<std::string> v;
        for (const auto& s : scenarios()) {
            v.push_back(s.name);
        }
        return v;
    });

    m.def("run_experiment",
          [](const std::string& config_text, const std::vector<std::string>& settings, bool write_files) {
              auto cfg = parse_config(config_text);
              for (const auto& s : settings) {
                  apply_setting(cfg, s);
              }
              ExperimentResult res;
              {
                  py::gil_scoped_release release;
                  res = run_experiment(cfg, write_files);
              }
              py::dict d;
              d["exit_code"] = res.exit_code;
              d["message"] = res.message;
              d["summary_csv"] = summary_csv(res.output.rows);
              py::dict files;
              for (const auto& [name, content] : res.output.files) {
                  files[py::str(name)] = content;
              }
              d["files"] = files;
              return d;
          },
          py::arg("config_text"), py::arg("settings") = std::vector<std::string>{}, py::arg("write_files") = false,
          "Runs a scenario from config text; settings are extra key=value overrides.");
}
