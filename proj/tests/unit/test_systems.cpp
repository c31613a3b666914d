#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "rdslab/errors.hpp"
#include "rdslab/integrate.hpp"
#include "rdslab/noise.hpp"
#include "rdslab/rds.hpp"
#include "rdslab/rng.hpp"
#include "rdslab/systems.hpp"

using namespace rdslab;

namespace {

SystemSpec lorenz(double rho, double gamma = 0.0) {
    return build_system("lorenz63", {{"sigma", 10.0}, {"rho", rho}, {"beta", 8.0 / 3.0}, {"gamma", gamma}});
}

std::vector<SystemSpec> catalog() {
    const auto grid = TimeGrid::make(0.0, 0.01, 10);
    const auto path = sample_path({ChannelKind::brownian()}, grid, 1, 0);
    const auto conj = build_system("lorenz63_conjugated",
                                   {{"sigma", 10.0}, {"rho", 0.5}, {"beta", 8.0 / 3.0}, {"gamma", 0.5}});
    return {lorenz(28.0, 0.5),
            bind_path(conj, path),
            build_system("doublewell_degenerate", {{"d", 3}, {"n", 1}, {"sigma", 0.5}}),
            build_system("cubic1d", {{"sigma", 1.0}}),
            build_system("geometric1d", {{"sigma", 1.0}}),
            build_system("gradient1d", {{"quartic", 1.0}, {"quadratic", -1.0}}),
            build_system("linear_d", {{"d", 2}, {"a_0_0", -1.0}, {"a_0_1", 0.3}, {"a_1_0", 0.2}, {"a_1_1", -2.0}})};
}

}  // namespace

TEST(BuildSystem, LorenzFixedPoints) {
    const auto s = lorenz(28.0);
    const double c = std::sqrt(8.0 / 3.0 * 27.0);
    EXPECT_NEAR(c, 8.4853, 1e-4);
    for (double sign : {1.0, -1.0}) {
        const auto b = s.drift(0.0, std::vector<double>{sign * c, sign * c, 27.0});
        for (double v : b) {
            EXPECT_NEAR(v, 0.0, 1e-12);
        }
    }
}

TEST(BuildSystem, CubicRootsAndSlope) {
    const auto s = build_system("cubic1d", {});
    EXPECT_EQ(s.drift(0.0, std::vector<double>{1.0})[0], 0.0);
    EXPECT_EQ(s.drift(0.0, std::vector<double>{0.0})[0], 0.0);
    EXPECT_EQ(s.jacobian(0.0, std::vector<double>{1.0})[0], -2.0);
}

TEST(BuildSystem, DegenerateDoubleWell) {
    const auto s = build_system("doublewell_degenerate", {{"d", 2}, {"n", 1}, {"sigma", 0.25}});
    const auto b = s.drift(0.0, std::vector<double>{0.0, 0.0});
    EXPECT_EQ(b, (std::vector<double>{0.0, 0.0}));
    ASSERT_EQ(s.noise_channels(), 1);
    EXPECT_EQ(s.coupling()[0], 0.25);
    EXPECT_EQ(s.coupling()[1], 0.0);
    EXPECT_EQ(s.coupling_rank(), 1);
    EXPECT_THROW(build_system("doublewell_degenerate", {{"d", 2}, {"n", 2}}), ConfigurationError);
}

TEST(BuildSystem, LorenzCouplingIsDegenerate) {
    const auto s = lorenz(0.5, 0.7);
    EXPECT_EQ(s.dim(), 3);
    EXPECT_EQ(s.coupling_rank(), 1);
    EXPECT_EQ(std::vector<double>(s.coupling().begin(), s.coupling().end()), (std::vector<double>{0.0, 0.0, 0.7}));
}

TEST(BuildSystem, Errors) {
    EXPECT_THROW(build_system("henon", {}), ConfigurationError);
    EXPECT_THROW(build_system("lorenz63", {{"sigma", 10.0}, {"rho", 28.0}}), ConfigurationError);
    EXPECT_THROW(build_system("lorenz63", {{"sigma", 10.0}, {"rho", 28.0}, {"beta", -1.0}}), ConfigurationError);
    EXPECT_THROW(build_system("cubic1d", {{"bogus", 1.0}}), ConfigurationError);
}

TEST(Jacobian, LorenzTraceAndOrigin) {
    const auto s = lorenz(0.5);
    rng::Cursor cur(rng::Stream(5, 0, 0));
    for (int i = 0; i < 50; ++i) {
        const std::vector<double> x{20 * cur.uniform() - 10, 20 * cur.uniform() - 10, 20 * cur.uniform() - 10};
        EXPECT_DOUBLE_EQ(s.jacobian_trace(0.0, x), -(10.0 + 1.0 + 8.0 / 3.0));
    }
    const auto j = s.jacobian(0.0, std::vector<double>{0.0, 0.0, 0.0});
    const std::vector<double> expected{-10.0, 10.0, 0.0, 0.5, -1.0, 0.0, 0.0, 0.0, -8.0 / 3.0};
    EXPECT_EQ(j, expected);
}

TEST(Jacobian, MatchesCentralDifferences) {
    rng::Cursor cur(rng::Stream(6, 0, 0));
    for (const auto& s : catalog()) {
        const int d = s.dim();
        for (int trial = 0; trial < 100; ++trial) {
            const std::vector<double> zero(static_cast<std::size_t>(d), 0.0);
            const auto x = uniform_in_ball(zero, 10.0, cur);
            const auto jac = s.jacobian(0.0, x);
            double scale = 1.0;
            for (double v : jac) {
                scale = std::max(scale, std::abs(v));
            }
            for (int j = 0; j < d; ++j) {
                const double h = 1e-5 * std::max(1.0, std::abs(x[j]));
                auto xp = x, xm = x;
                xp[j] += h;
                xm[j] -= h;
                const auto bp = s.drift(0.0, xp);
                const auto bm = s.drift(0.0, xm);
                for (int i = 0; i < d; ++i) {
                    const double fd = (bp[i] - bm[i]) / (2.0 * h);
                    EXPECT_LE(std::abs(fd - jac[i * d + j]) / scale, 1e-6) << s.name() << " entry " << i << "," << j;
                }
            }
        }
    }
}

TEST(Jacobian, ConjugatedNeedsAux) {
    const auto s = build_system("lorenz63_conjugated", {{"sigma", 10.0}, {"rho", 0.5}, {"beta", 8.0 / 3.0}});
    EXPECT_THROW(s.drift(0.0, std::vector<double>{0.0, 0.0, 0.0}), StateError);
    EXPECT_THROW(s.jacobian(0.0, std::vector<double>{0.0, 0.0, 0.0}), StateError);
}

TEST(DriftCondition, LinearOneSidedLipschitz) {
    const auto s = build_system("linear_d", {{"d", 2}, {"a_0_0", -1.0}, {"a_1_1", -2.0}});
    const Region region{{0.0, 0.0}, 5.0};
    const auto ok = verify_drift_condition(s, DriftCondition::one_sided_lipschitz(-1.0), {}, region, 2000, 1);
    EXPECT_TRUE(ok.pass);
    EXPECT_LE(ok.worst_margin, kDriftConditionTolerance);
    const auto bad = verify_drift_condition(s, DriftCondition::one_sided_lipschitz(-1.1), {}, region, 2000, 1);
    EXPECT_FALSE(bad.pass);
    EXPECT_GT(bad.worst_margin, 0.0);
}

TEST(DriftCondition, LorenzMonotoneAtOriginInWeightedMetric) {
    const auto s = lorenz(0.5);
    const std::vector<double> w{0.1, 1.0, 1.0};
    const Region region{{0.0, 0.0, 0.0}, 20.0};
    const auto ok = verify_drift_condition(s, DriftCondition::monotone_at_point({0.0, 0.0, 0.0}, 0.25), w, region,
                                           20000, 2);
    EXPECT_TRUE(ok.pass) << ok.worst_margin;
    // Exact rate in this metric: largest lambda with (1 - lambda/10)(1 - lambda) >= 9/16.
    const double critical = (1.1 - std::sqrt(1.21 - 0.175)) / 0.2;
    const auto edge = verify_drift_condition(s, DriftCondition::monotone_at_point({0.0, 0.0, 0.0}, critical - 0.01), w,
                                             region, 20000, 2);
    EXPECT_TRUE(edge.pass) << edge.worst_margin;
    const auto bad = verify_drift_condition(s, DriftCondition::monotone_at_point({0.0, 0.0, 0.0}, critical + 0.02), w,
                                            region, 20000, 2);
    EXPECT_FALSE(bad.pass);
}

namespace {

// Grid count of pairs in [-10, 10]^2 violating eventually_monotone(R, 1, 1)
// for b(x) = x - x^3.
int cubic_violations(double R) {
    const int n = 2000;
    int violations = 0;
    for (int i = 0; i < n; ++i) {
        const double x = -10.0 + 20.0 * i / (n - 1);
        for (int j = 0; j < n; ++j) {
            const double y = -10.0 + 20.0 * j / (n - 1);
            if (i == j) {
                continue;
            }
            const double form = ((x - x * x * x) - (y - y * y * y)) * (x - y);
            const double sq = (x - y) * (x - y);
            const double bound = std::abs(x) + std::abs(y) < R ? sq : -sq;
            violations += form > bound + 1e-9 * sq ? 1 : 0;
        }
    }
    return violations;
}

}  // namespace

TEST(DriftCondition, CubicEventuallyMonotone) {
    const auto s = build_system("cubic1d", {});
    // On |x| + |y| = 2 the pair x = -y = 1 gives a form of 0, not -|x-y|^2,
    // so R = 2 fails and both the sampler and the grid see it.
    const auto at_two =
        verify_drift_condition(s, DriftCondition::eventually_monotone(2.0, 1.0, 1.0), {}, {{0.0}, 10.0}, 20000, 3);
    EXPECT_FALSE(at_two.pass);
    EXPECT_GT(cubic_violations(2.0), 0);

    // x^2 + xy + y^2 >= 2 once |x| + |y| >= 2 sqrt 2.
    const double R = 2.0 * std::sqrt(2.0) + 1e-9;
    const auto rep =
        verify_drift_condition(s, DriftCondition::eventually_monotone(R, 1.0, 1.0), {}, {{0.0}, 10.0}, 20000, 3);
    EXPECT_TRUE(rep.pass) << rep.worst_margin;
    EXPECT_EQ(cubic_violations(R), 0);
}

TEST(Conjugation, TrajectoriesAgreeToFirstOrder) {
    const double beta = 8.0 / 3.0;
    const auto direct = lorenz(0.5, 1.0);
    const auto conj =
        build_system("lorenz63_conjugated", {{"sigma", 10.0}, {"rho", 0.5}, {"beta", beta}, {"gamma", 1.0}});
    double err[2] = {0.0, 0.0};
    const double dts[2] = {0.01, 0.005};
    for (int r = 0; r < 2; ++r) {
        const auto path = sample_path({ChannelKind::brownian()}, TimeGrid::over(0.0, 10.0, dts[r]), 8, 0);
        const auto bound = bind_path(conj, path);
        const double o0 = bound.aux()->values[0];
        const std::vector<double> xc{1.0, 2.0, 3.0};
        const std::vector<double> xd{1.0, 2.0, 3.0 + o0};
        const auto a = integrate(direct, xd, path, Scheme::euler_maruyama);
        const auto b = integrate(bound, xc, path, Scheme::euler_maruyama);
        for (std::int64_t k = 0; k <= path.n_steps(); ++k) {
            const double o = bound.aux()->values[static_cast<std::size_t>(k)];
            err[r] = std::max({err[r], std::abs(a.state(k)[0] - b.state(k)[0]), std::abs(a.state(k)[1] - b.state(k)[1]),
                               std::abs(a.state(k)[2] - o - b.state(k)[2])});
        }
    }
    EXPECT_LE(err[0], 5.0 * 0.01);
    EXPECT_LE(err[1], 5.0 * 0.005);
    EXPECT_LT(err[1], 0.75 * err[0]);
}

TEST(QuadraticRemainder, BoundsTheLorenzRemainder) {
    const auto s = lorenz(0.5);
    const std::vector<double> w{0.1, 1.0, 2.0};
    const auto q = s.quadratic_remainder(w);
    ASSERT_TRUE(q.has_value());
    rng::Cursor cur(rng::Stream(9, 0, 0));
    const std::vector<double> zero{0.0, 0.0, 0.0};
    for (int i = 0; i < 1000; ++i) {
        const auto x = uniform_in_ball(zero, 10.0, cur);
        const auto e = uniform_in_ball(zero, 2.0, cur);
        std::vector<double> xe{x[0] + e[0], x[1] + e[1], x[2] + e[2]};
        const auto bx = s.drift(0.0, x);
        const auto bxe = s.drift(0.0, xe);
        const auto j = s.jacobian(0.0, x);
        double n2 = 0.0, e2 = 0.0, inner = 0.0;
        for (int r = 0; r < 3; ++r) {
            double je = 0.0;
            for (int c = 0; c < 3; ++c) {
                je += j[r * 3 + c] * e[c];
            }
            const double rem = bxe[r] - bx[r] - je;
            n2 += w[r] * rem * rem;
            e2 += w[r] * e[r] * e[r];
            inner += w[r] * rem * e[r];
        }
        EXPECT_LE(std::sqrt(n2), q->norm * e2 * (1 + 1e-9) + 1e-12);
        EXPECT_LE(std::abs(inner), q->inner * std::pow(e2, 1.5) * (1 + 1e-9) + 1e-12);
    }
    EXPECT_FALSE(build_system("cubic1d", {}).quadratic_remainder(std::vector<double>{1.0}).has_value());
}
