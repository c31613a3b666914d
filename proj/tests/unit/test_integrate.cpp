#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "rdslab/errors.hpp"
#include "rdslab/integrate.hpp"
#include "rdslab/noise.hpp"
#include "rdslab/rds.hpp"
#include "rdslab/rng.hpp"
#include "rdslab/systems.hpp"

using namespace rdslab;

namespace {

SystemSpec lorenz(double rho, double gamma) {
    return build_system("lorenz63", {{"sigma", 10.0}, {"rho", rho}, {"beta", 8.0 / 3.0}, {"gamma", gamma}});
}

SystemSpec diag_linear() {
    return build_system("linear_d", {{"d", 2}, {"a_0_0", -1.0}, {"a_1_1", -2.0}});
}

struct Case {
    SystemSpec system;
    std::vector<ChannelKind> kinds;
    std::vector<double> x0;
};

std::vector<Case> cases() {
    return {
        {lorenz(0.5, 0.5), {ChannelKind::brownian()}, {1.0, -2.0, 3.0}},
        {build_system("lorenz63_conjugated", {{"sigma", 10.0}, {"rho", 0.5}, {"beta", 8.0 / 3.0}, {"gamma", 0.5}}),
         {ChannelKind::brownian()},
         {1.0, -2.0, 3.0}},
        {build_system("doublewell_degenerate", {{"d", 2}, {"n", 1}, {"sigma", 2.0}}), {ChannelKind::brownian()}, {0.3, 0.5}},
        {build_system("cubic1d", {{"sigma", 1.0}}), {ChannelKind::stable(1.5)}, {0.5}},
        {build_system("cubic1d", {{"sigma", 1.0}}), {ChannelKind::poisson(1.0)}, {0.5}},
        {build_system("geometric1d", {{"sigma", 1.0}}), {ChannelKind::brownian()}, {1.0}},
        {build_system("gradient1d", {}), {ChannelKind::brownian()}, {0.2}},
        {diag_linear(), {ChannelKind::brownian(), ChannelKind::brownian()}, {1.0, 1.0}},
    };
}

}  // namespace

TEST(Integrate, LinearDecayTracksExponential) {
    const auto s = build_system("linear_d", {{"d", 2}, {"a_0_0", -1.0}, {"a_1_1", -1.0}});
    const auto path = sample_path({ChannelKind::zero(), ChannelKind::zero()}, TimeGrid::over(0.0, 5.0, 0.01), 0, 0);
    const auto tr = integrate(s, std::vector<double>{1.0, 1.0}, path, Scheme::euler_maruyama);
    EXPECT_EQ(tr.state(0)[0], 1.0);
    double err = 0.0;
    for (std::int64_t k = 0; k <= path.n_steps(); ++k) {
        err = std::max(err, std::abs(tr.state(k)[0] - std::exp(-tr.grid.time(k))));
    }
    EXPECT_LE(err, 0.5 * 0.01);
}

TEST(Integrate, CocycleIdentityIsBitwise) {
    for (auto scheme : {Scheme::euler_maruyama, Scheme::tamed_euler}) {
        for (const auto& c : cases()) {
            const auto path = sample_path(c.kinds, TimeGrid::make(0.0, 0.01, 600), 42, 3);
            const auto bound = bind_path(c.system, path);
            const auto full = integrate(bound, c.x0, path, scheme);
            for (std::int64_t s : {1, 250, 599}) {
                const auto head = integrate_final(bound, c.x0, path.slice(0, s), scheme);
                const auto tail = integrate(bound, head, shift_path(path, s), scheme);
                for (std::int64_t k = 0; k <= tail.grid.n_steps; ++k) {
                    for (int i = 0; i < c.system.dim(); ++i) {
                        ASSERT_EQ(tail.state(k)[i], full.state(s + k)[i]) << c.system.name() << " split " << s;
                    }
                }
            }
        }
    }
}

TEST(Integrate, TamedCubicPreservesOrder) {
    const auto s = build_system("cubic1d", {{"sigma", 1.0}});
    rng::Cursor cur(rng::Stream(3, 0, 0));
    int violations = 0;
    for (int r = 0; r < 1000; ++r) {
        const auto path = sample_path({ChannelKind::brownian()}, TimeGrid::over(0.0, 5.0, 0.01), 5,
                                      static_cast<std::uint64_t>(r));
        double x = 20.0 * cur.uniform() - 10.0;
        double y = x + 5.0 * cur.uniform();
        Stepper st(s, Scheme::tamed_euler, 0.01);
        for (std::int64_t k = 0; k < path.n_steps(); ++k) {
            double nx = 0.0, ny = 0.0;
            st.advance(0.0, std::span<const double>(&x, 1), path.increment(k), std::span<double>(&nx, 1));
            st.advance(0.0, std::span<const double>(&y, 1), path.increment(k), std::span<double>(&ny, 1));
            x = nx;
            y = ny;
            violations += x > y ? 1 : 0;
        }
    }
    EXPECT_EQ(violations, 0);
}

TEST(Integrate, TamedCubicNeverBlowsUp) {
    const auto s = build_system("cubic1d", {{"sigma", 8.0}});
    for (int r = 0; r < 20; ++r) {
        const auto path = sample_path({ChannelKind::stable(1.2)}, TimeGrid::over(0.0, 100.0, 0.01), 6,
                                      static_cast<std::uint64_t>(r));
        const double x0 = r % 2 == 0 ? 10.0 : -10.0;
        EXPECT_NO_THROW(integrate_final(s, std::vector<double>{x0}, path, Scheme::tamed_euler));
    }
}

TEST(Integrate, BlowUpCarriesIndex) {
    const auto s = build_system("cubic1d", {});
    const auto path = sample_path({ChannelKind::zero()}, TimeGrid::make(0.0, 0.1, 100), 0, 0);
    try {
        integrate(s, std::vector<double>{1e3}, path, Scheme::euler_maruyama);
        FAIL() << "expected a blow-up";
    } catch (const BlowUpError& e) {
        EXPECT_GT(e.index(), 0);
        EXPECT_LE(e.index(), 100);
    }
}

TEST(Integrate, RejectsMismatchedInput) {
    const auto s = diag_linear();
    const auto path = sample_path({ChannelKind::brownian()}, TimeGrid::make(0.0, 0.01, 10), 0, 0);
    EXPECT_THROW(integrate(s, std::vector<double>{1.0, 1.0}, path, Scheme::euler_maruyama), Error);
    const auto path2 = sample_path({ChannelKind::brownian(), ChannelKind::brownian()}, TimeGrid::make(0.0, 0.01, 10), 0, 0);
    EXPECT_THROW(integrate(s, std::vector<double>{1.0}, path2, Scheme::euler_maruyama), Error);
    EXPECT_THROW(integrate(s, std::vector<double>{NAN, 1.0}, path2, Scheme::euler_maruyama), Error);
}

TEST(Integrate, TrajectoryCsv) {
    const auto s = diag_linear();
    const auto path = sample_path({ChannelKind::zero(), ChannelKind::zero()}, TimeGrid::make(0.0, 0.5, 2), 0, 0);
    std::ostringstream os;
    integrate(s, std::vector<double>{1.0, 2.0}, path, Scheme::euler_maruyama).write_csv(os);
    EXPECT_EQ(os.str(), "t,x0,x1\n0,1,2\n0.5,0.5,0\n1,0.25,0\n");
}

TEST(Schemes, NamesAndDefaults) {
    EXPECT_EQ(parse_scheme("tamed"), Scheme::tamed_euler);
    EXPECT_EQ(parse_scheme(to_string(Scheme::euler_maruyama)), Scheme::euler_maruyama);
    EXPECT_THROW(parse_scheme("rk4"), Error);
    EXPECT_EQ(default_scheme(build_system("cubic1d", {})), Scheme::tamed_euler);
    EXPECT_EQ(default_scheme(build_system("doublewell_degenerate", {{"d", 2}, {"n", 1}})), Scheme::tamed_euler);
    EXPECT_EQ(default_scheme(lorenz(0.5, 0.5)), Scheme::euler_maruyama);
}

TEST(Lyapunov, LinearDiagonalExact) {
    const auto path = sample_path({ChannelKind::zero(), ChannelKind::zero()}, TimeGrid::over(0.0, 20.0, 0.01), 0, 0);
    LyapunovOptions o;
    o.k = 2;
    o.rule = TangentRule::frozen_exponential;
    const auto est = lyapunov_spectrum(diag_linear(), std::vector<double>{1.0, 1.0}, path, o);
    ASSERT_EQ(est.exponents.size(), 2u);
    EXPECT_NEAR(est.exponents[0], -1.0, 1e-6);
    EXPECT_NEAR(est.exponents[1], -2.0, 1e-6);
    EXPECT_GE(est.exponents[0], est.exponents[1]);
}

TEST(Lyapunov, GeometricExponentIsMinusHalf) {
    const auto s = build_system("geometric1d", {{"sigma", 1.0}});
    std::vector<double> tops;
    for (int r = 0; r < 20; ++r) {
        const auto path = sample_path({ChannelKind::brownian()}, TimeGrid::over(0.0, 200.0, 1e-3), 1,
                                      static_cast<std::uint64_t>(r));
        tops.push_back(lyapunov_spectrum(s, std::vector<double>{1.0}, path, {}).top());
    }
    const double mean = std::accumulate(tops.begin(), tops.end(), 0.0) / static_cast<double>(tops.size());
    EXPECT_NEAR(mean, -0.5, 0.05);
}

TEST(Lyapunov, NoisyLorenzBelowThresholdContracts) {
    const auto path = sample_path({ChannelKind::brownian()}, TimeGrid::over(0.0, 500.0, 0.01), 2, 0);
    const auto est = lyapunov_spectrum(lorenz(0.5, 1.0), std::vector<double>{1.0, 1.0, 1.0}, path, {});
    EXPECT_LT(est.top(), 0.0);
}

TEST(Lyapunov, RejectsBadOptions) {
    const auto path = sample_path({ChannelKind::zero(), ChannelKind::zero()}, TimeGrid::make(0.0, 0.01, 100), 0, 0);
    LyapunovOptions o;
    o.k = 3;
    EXPECT_THROW(lyapunov_spectrum(diag_linear(), std::vector<double>{1.0, 1.0}, path, o), Error);
    o.k = 1;
    o.renorm_every = 0;
    EXPECT_THROW(lyapunov_spectrum(diag_linear(), std::vector<double>{1.0, 1.0}, path, o), Error);
}

TEST(Lyapunov, CollapsedFrameIsDegenerate) {
    const auto s = build_system("linear_d", {{"d", 1}, {"a_0_0", -100.0}});
    const auto path = sample_path({ChannelKind::zero()}, TimeGrid::make(0.0, 0.01, 100), 0, 0);
    EXPECT_THROW(lyapunov_spectrum(s, std::vector<double>{1.0}, path, {}), DegeneracyError);
}

TEST(TraceAverage, LorenzIsStateIndependent) {
    const auto s = lorenz(28.0, 0.5);
    const auto path = sample_path({ChannelKind::brownian()}, TimeGrid::over(0.0, 20.0, 0.01), 4, 0);
    const auto tr = integrate(s, std::vector<double>{1.0, 1.0, 1.0}, path, Scheme::euler_maruyama);
    const auto ta = trace_average(s, tr, path);
    EXPECT_NEAR(ta.generator.mean, -(10.0 + 1.0 + 8.0 / 3.0), 1e-12);
}

TEST(TraceAverage, SumOfExponentsIdentity) {
    for (const auto& c : cases()) {
        const auto path = sample_path(c.kinds, TimeGrid::over(0.0, 10.0, 0.01), 13, 1);
        const auto bound = bind_path(c.system, path);
        const auto tr = integrate(bound, c.x0, path, default_scheme(c.system));
        const auto ta = trace_average(bound, tr, path);
        for (auto rule : {TangentRule::scheme_jacobian, TangentRule::frozen_exponential}) {
            if (rule == TangentRule::frozen_exponential && c.system.multiplicative()) {
                continue;
            }
            LyapunovOptions o;
            o.k = c.system.dim();
            o.rule = rule;
            o.scheme = default_scheme(c.system);
            const auto est = lyapunov_spectrum(bound, c.x0, path, o);
            const double ref = rule == TangentRule::scheme_jacobian ? ta.scheme_log_det.mean : ta.generator.mean;
            EXPECT_LE(std::abs(est.sum() - ref), 1e-6 * std::max(1.0, std::abs(ref)))
                << c.system.name() << " " << to_string(rule);
        }
    }
}

TEST(Tangent, LinearizationMatchesFlow) {
    const auto s = lorenz(28.0, 0.5);
    const auto path = sample_path({ChannelKind::brownian()}, TimeGrid::over(0.0, 1.0, 0.001), 7, 0);
    const std::vector<double> x0{1.0, 1.0, 20.0};
    Stepper st(s, Scheme::euler_maruyama, path.grid().dt);
    std::vector<double> x = x0, nx(3), m(9), step(9), prod(9);
    for (int i = 0; i < 3; ++i) {
        m[i * 4] = 1.0;
    }
    for (std::int64_t k = 0; k < path.n_steps(); ++k) {
        st.tangent(path.grid().time(k), x, path.increment(k), TangentRule::scheme_jacobian, step);
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                double v = 0.0;
                for (int l = 0; l < 3; ++l) {
                    v += step[i * 3 + l] * m[l * 3 + j];
                }
                prod[i * 3 + j] = v;
            }
        }
        m.swap(prod);
        st.advance(path.grid().time(k), x, path.increment(k), nx);
        x.swap(nx);
    }
    rng::Cursor cur(rng::Stream(8, 0, 0));
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> dir{cur.normal(), cur.normal(), cur.normal()};
        const double n = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
        std::vector<double> xd(3);
        for (int i = 0; i < 3; ++i) {
            dir[i] *= 1e-6 / n;
            xd[i] = x0[i] + dir[i];
        }
        const auto y = integrate_final(s, xd, path, Scheme::euler_maruyama);
        double err = 0.0;
        for (int i = 0; i < 3; ++i) {
            double lin = 0.0;
            for (int j = 0; j < 3; ++j) {
                lin += m[i * 3 + j] * dir[j];
            }
            err += std::pow(y[i] - x[i] - lin, 2);
        }
        EXPECT_LE(std::sqrt(err), 1e-4 * 1e-6);
    }
}
