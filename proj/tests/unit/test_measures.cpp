#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "rdslab/errors.hpp"
#include "rdslab/integrate.hpp"
#include "rdslab/measures.hpp"
#include "rdslab/noise.hpp"
#include "rdslab/rds.hpp"
#include "rdslab/rng.hpp"
#include "rdslab/stats.hpp"
#include "rdslab/systems.hpp"

using namespace rdslab;

namespace {

// Mass of [a, b] under the density proportional to exp(-2V) with
// V = x^4/4 - x^2/2, by the trapezoid rule on [-4, 4].
double cubic_mass(double a, double b) {
    const int n = 80000;
    const double lo = -4.0, hi = 4.0, h = (hi - lo) / n;
    double total = 0.0, part = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double x = lo + i * h;
        const double f = std::exp(x * x - 0.5 * x * x * x * x) * (i == 0 || i == n ? 0.5 : 1.0);
        total += f;
        if (x >= a && x <= b) {
            part += f;
        }
    }
    return part / total;
}

// E|c - X| for X ~ N(0, s^2) by the trapezoid rule on +-12 s.
double folded_by_quadrature(double c, double s) {
    const int n = 400000;
    const double h = 24.0 * s / n;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double x = -12.0 * s + i * h;
        const double f = std::abs(c - x) * std::exp(-0.5 * x * x / (s * s)) * (i == 0 || i == n ? 0.5 : 1.0);
        acc += f;
    }
    return acc * h / (s * std::sqrt(2.0 * std::numbers::pi));
}

}  // namespace

TEST(FoldedNormal, KnownValues) {
    EXPECT_NEAR(folded_normal_mean(0.0, 1.0), std::sqrt(2.0 / std::numbers::pi), 1e-15);
    EXPECT_NEAR(folded_normal_mean(0.0, 1.0), 0.79788, 5e-6);
    EXPECT_EQ(folded_normal_mean(-3.0, 0.0), 3.0);
    const double beta = 8.0 / 3.0;
    const double s = 1.0 / std::sqrt(2.0 * beta);
    EXPECT_NEAR(s, 0.43301, 5e-6);
    const double v = folded_normal_mean(1.5, s);
    EXPECT_NEAR(v, 1.50009, 5e-5);
    EXPECT_NEAR(v, folded_by_quadrature(1.5, s), 1e-10);
    EXPECT_NEAR(folded_normal_mean(0.3, 1.7), folded_by_quadrature(0.3, 1.7), 1e-10);
    const double bound = 1.5 + std::sqrt(1.0 / (std::numbers::pi * beta));
    EXPECT_NEAR(bound, 1.84549, 5e-6);
    EXPECT_LE(v, bound);
    EXPECT_THROW(folded_normal_mean(1.0, -0.1), ParameterError);
}

TEST(FoldedNormal, MonteCarloAgreement) {
    rng::Cursor cur(rng::Stream(21, 0, 0));
    const int n = 1'000'000;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
        sum += std::abs(1.5 - 0.43301 * cur.normal());
    }
    // sd of |1.5 - X| is below 0.44
    EXPECT_NEAR(sum / n, folded_normal_mean(1.5, 0.43301), 4.0 * 0.44 / std::sqrt(n));
}

TEST(FoldedNormal, GridScanBounds) {
    const double k = std::sqrt(2.0 / std::numbers::pi);
    for (int i = 0; i <= 30; ++i) {
        const double c = 0.1 * i;
        double prev = std::abs(c);
        for (int j = 1; j <= 20; ++j) {
            const double s = 0.1 * j;
            const double v = folded_normal_mean(c, s);
            EXPECT_GE(v, std::abs(c) - 1e-15);
            EXPECT_GE(v, s * k - 1e-15);
            EXPECT_LE(v, std::abs(c) + s * k + 1e-15);
            EXPECT_GE(v, prev - 1e-15);
            EXPECT_EQ(folded_normal_mean(-c, s), v);
            prev = v;
        }
    }
}

TEST(LorenzFunctional, ValuesAtOrigin) {
    const std::vector<double> o{0.0, 0.0, 0.0};
    EXPECT_DOUBLE_EQ(lorenz_functional(o, 0.5, 10.0), 55.125);
    EXPECT_DOUBLE_EQ(lorenz_k(10.0, 8.0 / 3.0), 4.0 / 3.0);
    EXPECT_DOUBLE_EQ(lorenz_k(1.0, 8.0), 1.0);
    EXPECT_DOUBLE_EQ(lorenz_k(10.0, 8.0), 2.0);
}

TEST(LorenzAbsorbing, DeterministicRunHasNoViolations) {
    const double beta = 8.0 / 3.0;
    const auto sys = build_system("lorenz63_conjugated", {{"sigma", 10.0}, {"rho", 0.5}, {"beta", beta}, {"gamma", 0.0}});
    const auto path = sample_path({ChannelKind::brownian()}, TimeGrid::over(0.0, 20.0, 0.001), 1, 0);
    const auto bound = bind_path(sys, path);
    ASSERT_NE(bound.aux(), nullptr);
    for (const auto& x0 : std::vector<std::vector<double>>{{5.0, -3.0, 8.0}, {-9.0, 0.0, 1.0}, {0.0, 0.0, 0.0}}) {
        const auto traj = integrate(bound, x0, path, Scheme::euler_maruyama);
        const auto rep = lorenz_absorbing_check(traj, *bound.aux(), 0.5, 10.0, beta, beta);
        EXPECT_EQ(rep.violations, 0);
        EXPECT_EQ(rep.n_steps, 20000);
        EXPECT_DOUBLE_EQ(rep.K, 4.0 / 3.0);
    }
}

TEST(LorenzAbsorbing, RandomGammaRuns) {
    const double beta = 8.0 / 3.0;
    rng::Cursor cur(rng::Stream(22, 0, 0));
    for (int r = 0; r < 10; ++r) {
        const double g = 2.0 * cur.uniform();
        const auto sys = build_system("lorenz63_conjugated", {{"sigma", 10.0}, {"rho", 0.5}, {"beta", beta}, {"gamma", g}});
        const auto path = sample_path({ChannelKind::brownian()}, TimeGrid::over(0.0, 20.0, 0.001), 2,
                                      static_cast<std::uint64_t>(r));
        const auto bound = bind_path(sys, path);
        const auto x0 = uniform_in_ball(std::vector<double>{0.0, 0.0, 0.0}, 10.0, cur);
        const auto traj = integrate(bound, x0, path, Scheme::euler_maruyama);
        const auto rep = lorenz_absorbing_check(traj, *bound.aux(), 0.5, 10.0, beta, beta);
        EXPECT_EQ(rep.violations, 0) << "gamma " << g;
        EXPECT_DOUBLE_EQ(rep.tol_constant, 10.0 * (1.0 + rep.max_L) * (1.0 + rep.max_O2));
    }
}

TEST(LorenzAbsorbing, MisalignedOUPathRejected) {
    const double beta = 8.0 / 3.0;
    const auto sys = build_system("lorenz63_conjugated", {{"sigma", 10.0}, {"rho", 0.5}, {"beta", beta}, {"gamma", 1.0}});
    const auto path = sample_path({ChannelKind::brownian()}, TimeGrid::over(0.0, 1.0, 0.001), 2, 0);
    const auto traj = integrate(bind_path(sys, path), std::vector<double>{1.0, 1.0, 1.0}, path, Scheme::euler_maruyama);
    const auto other = ou_from_path(sample_path({ChannelKind::brownian()}, TimeGrid::over(0.0, 1.0, 0.002), 2, 0), 0,
                                    beta, 1.0);
    EXPECT_THROW(lorenz_absorbing_check(traj, other, 0.5, 10.0, beta, beta), AlignmentError);
}

TEST(Invariant, OrnsteinUhlenbeckVariance) {
    const auto sys = build_system("linear_d", {{"d", 1}, {"a_0_0", -2.0}, {"sigma", 1.5}});
    InvariantOptions o;
    o.n_samples = 20000;
    o.master_seed = 3;
    const auto cloud = sample_invariant(sys, {ChannelKind::brownian()}, o);
    EXPECT_EQ(cloud.size(), 20000);
    const auto sum = cloud.summarize(0);
    // Euler for dX = -2X dt + 1.5 dW has stationary variance 1.5^2 dt / (1 - (1 - 2 dt)^2).
    const double exact = 2.25 / (2.0 * 2.0);
    EXPECT_NEAR(sum.variance.mean, exact, 3.0 * sum.variance.std_error + 0.01 * exact);
    EXPECT_NEAR(sum.mean.mean, 0.0, 3.0 * sum.mean.std_error);
    EXPECT_FALSE(sum.quantiles.empty());
    EXPECT_EQ(sum.quantiles.size(), sum.quantile_levels.size());
}

TEST(Invariant, DefaultBurnInIsOneFifth) {
    const auto sys = build_system("linear_d", {{"d", 1}, {"a_0_0", -1.0}});
    InvariantOptions o;
    o.n_samples = 100;
    o.thin = 4;
    const auto cloud = sample_invariant(sys, {ChannelKind::brownian()}, o);
    EXPECT_NEAR(cloud.burn_in, 0.25 * 100 * 4 * 0.01, 1e-12);
    EXPECT_EQ(cloud.thin, 4);
    o.thin = 0;
    EXPECT_THROW(sample_invariant(sys, {ChannelKind::brownian()}, o), ParameterError);
}

TEST(Invariant, CubicDensityIsSymmetricAndBimodal) {
    const auto sys = build_system("cubic1d", {{"sigma", 1.0}});
    InvariantOptions o;
    o.n_samples = 40000;
    o.master_seed = 4;
    const auto cloud = sample_invariant(sys, {ChannelKind::brownian()}, o);
    const auto x = cloud.coordinate(0);
    auto frac = [&](double a, double b) {
        std::int64_t c = 0;
        for (double v : x) {
            c += v >= a && v <= b ? 1 : 0;
        }
        return static_cast<double>(c) / static_cast<double>(x.size());
    };
    const double centre = frac(-0.1, 0.1);
    const double right = frac(0.9, 1.1);
    const double left = frac(-1.1, -0.9);
    EXPECT_GT(right, 1.5 * centre);
    EXPECT_GT(left, 1.5 * centre);
    EXPECT_NEAR(frac(0.0, 10.0), 0.5, 0.06);
    for (const auto& [a, b] : std::vector<std::pair<double, double>>{{0.5, 1.5}, {-0.5, 0.5}, {-1.5, -0.5}}) {
        EXPECT_NEAR(frac(a, b), cubic_mass(a, b), 0.04) << a << " " << b;
    }
}

TEST(BallMass, TrivialAndNested) {
    SampleCloud cloud;
    cloud.dim = 2;
    cloud.samples = {0.1, 0.0, -0.3, 0.2, 0.5, -0.5, 2.0, 1.0};
    const std::vector<double> c{0.0, 0.0};
    EXPECT_EQ(ball_mass(cloud, c, 10.0).mean, 1.0);
    EXPECT_EQ(ball_mass(cloud, c, std::sqrt(5.0)).mean, 1.0);
    EXPECT_EQ(ball_mass(cloud, c, 0.05).mean, 0.0);
    double prev = 0.0;
    for (double R = 0.05; R <= 3.0; R += 0.05) {
        const double m = ball_mass(cloud, c, R).mean;
        EXPECT_GE(m, prev);
        prev = m;
    }
    const auto st = ball_mass(cloud, c, 1.0);
    EXPECT_EQ(st.n, 4);
    EXPECT_DOUBLE_EQ(st.mean, 0.75);
    EXPECT_LT(st.ci_low, 0.75);
    EXPECT_GT(st.ci_high, 0.75);
}

TEST(BallMass, SweepCsv) {
    auto make = [](double s) {
        SampleCloud c;
        c.dim = 1;
        c.samples = {0.0, s, 2.0 * s};
        return c;
    };
    const std::vector<double> center{0.0};
    const auto rows = ball_mass_sweep(make, {0.5, 1.0, 4.0}, center, 1.0);
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_EQ(rows[0].mass.mean, 1.0);
    EXPECT_NEAR(rows[1].mass.mean, 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(rows[2].mass.mean, 1.0 / 3.0, 1e-15);
    std::ostringstream os;
    write_sweep_csv(os, rows);
    EXPECT_NE(os.str().find("sigma,R,mass,ci_low,ci_high\n"), std::string::npos);
    EXPECT_EQ(os.str().rfind("# schema=rds-lab.v1", 0), 0u);
}

TEST(CloudCsv, Header) {
    SampleCloud c;
    c.dim = 2;
    c.samples = {1.0, 2.0};
    std::ostringstream os;
    c.write_csv(os);
    EXPECT_EQ(os.str(), "# schema=rds-lab.v1\nidx,x0,x1\n0,1,2\n");
}

TEST(Ergodic, ConstantSeries) {
    const std::vector<double> v(1000, 2.5);
    const auto st = ergodic_average(v, 50);
    EXPECT_EQ(st.mean, 2.5);
    EXPECT_EQ(st.std_error, 0.0);
    EXPECT_THROW(ergodic_average(v, 600), LengthError);
}

TEST(Ergodic, BatchMeansScaling) {
    rng::Cursor cur(rng::Stream(23, 0, 0));
    std::vector<double> v(160000);
    for (auto& x : v) {
        x = cur.normal();
    }
    const auto a = batch_means(std::span<const double>(v).first(10000), 500, "a");
    const auto b = batch_means(v, 500, "b");
    const double ratio = a.std_error / b.std_error;
    EXPECT_GT(ratio, 2.0);
    EXPECT_LT(ratio, 8.0);
    EXPECT_NEAR(b.std_error, 1.0 / std::sqrt(160000.0), 0.5 / std::sqrt(160000.0));
}

TEST(Ergodic, OUFunctionalsMatchClosedForms) {
    const double beta = 8.0 / 3.0;
    const auto path = sample_path({ChannelKind::brownian()}, TimeGrid::over(0.0, 5000.0, 0.01), 5, 0);
    const auto ou = ou_from_path(path, 0, beta, 1.0);
    std::vector<double> fold(ou.values.size()), sq(ou.values.size());
    for (std::size_t k = 0; k < ou.values.size(); ++k) {
        fold[k] = std::abs(1.5 - ou.values[k]);
        sq[k] = ou.values[k] * ou.values[k];
    }
    const auto batch = static_cast<std::int64_t>(fold.size() / 20);
    const auto f = ergodic_average(fold, batch);
    const auto s = ergodic_average(sq, batch);
    EXPECT_NEAR(f.mean, folded_normal_mean(1.5, 1.0 / std::sqrt(2.0 * beta)), 3.0 * f.std_error);
    EXPECT_NEAR(s.mean, 1.0 / (2.0 * beta), 3.0 * s.std_error);
}
