#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "rdslab/errors.hpp"
#include "rdslab/integrate.hpp"
#include "rdslab/noise.hpp"
#include "rdslab/rds.hpp"
#include "rdslab/rng.hpp"
#include "rdslab/stats.hpp"
#include "rdslab/systems.hpp"

using namespace rdslab;

namespace {

SystemSpec lorenz(double rho, double gamma) {
    return build_system("lorenz63", {{"sigma", 10.0}, {"rho", rho}, {"beta", 8.0 / 3.0}, {"gamma", gamma}});
}

SystemSpec minus_identity(int d) {
    ParamMap p{{"d", static_cast<double>(d)}};
    for (int i = 0; i < d; ++i) {
        p["a_" + std::to_string(i) + "_" + std::to_string(i)] = -1.0;
    }
    return build_system("linear_d", p);
}

EnsembleConfig ensemble(std::vector<ChannelKind> kinds, double dt, std::uint64_t seed = 1) {
    EnsembleConfig c;
    c.kinds = std::move(kinds);
    c.dt = dt;
    c.master_seed = seed;
    return c;
}

DriftConditionReport verified_linear(const SystemSpec& s, double lambda) {
    const std::vector<double> center(static_cast<std::size_t>(s.dim()), 0.0);
    auto rep = verify_drift_condition(s, DriftCondition::one_sided_lipschitz(lambda), {}, {center, 10.0}, 500, 1);
    EXPECT_TRUE(rep.pass);
    return rep;
}

}  // namespace

TEST(TwoPoint, LinearDifferenceIsDeterministic) {
    const auto s = minus_identity(2);
    const auto path = sample_path({ChannelKind::stable(1.5), ChannelKind::brownian()}, TimeGrid::over(0.0, 5.0, 0.01), 3, 0);
    const std::vector<double> x{1.0, 2.0}, y{-1.0, 0.5};
    const auto ds = two_point_run(s, x, y, path, Scheme::euler_maruyama);
    EXPECT_EQ(ds.path_fingerprint, path.fingerprint());
    const double d0 = std::hypot(2.0, 1.5);
    for (std::size_t k = 0; k < ds.distance.size(); ++k) {
        EXPECT_NEAR(ds.distance[k], d0 * std::exp(-0.01 * static_cast<double>(k)), d0 * 0.01);
    }
}

TEST(TwoPoint, SubordinatorCubicContracts) {
    const auto s = build_system("cubic1d", {{"sigma", 1.0}});
    const auto res = sync_probability(s, PairSource::fixed_pair({0.75}, {1.25}), 40.0, 1e-6, 200,
                                      ensemble({ChannelKind::subordinator(0.9)}, 0.01));
    EXPECT_EQ(res.blowups, 0);
    EXPECT_EQ(res.proportion.mean, 1.0);
}

TEST(TwoPoint, DegenerateDoubleWellKeepsSignOfUnforcedCoordinate) {
    const auto s = build_system("doublewell_degenerate", {{"d", 2}, {"n", 1}, {"sigma", 0.25}});
    for (int r = 0; r < 50; ++r) {
        const auto path = sample_path({ChannelKind::brownian()}, TimeGrid::over(0.0, 100.0, 0.01), 1,
                                      static_cast<std::uint64_t>(r));
        const auto a = integrate(s, std::vector<double>{0.0, 0.5}, path, Scheme::tamed_euler);
        const auto b = integrate(s, std::vector<double>{0.0, -0.5}, path, Scheme::tamed_euler);
        for (std::int64_t k = 0; k <= path.n_steps(); ++k) {
            ASSERT_GT(a.state(k)[1], 0.0);
            ASSERT_LT(b.state(k)[1], 0.0);
        }
    }
}

TEST(SyncProbability, IdenticalPointsAlwaysSynchronize) {
    const auto res = sync_probability(lorenz(28.0, 0.0), PairSource::fixed_pair({1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}), 5.0,
                                      1e-6, 30, ensemble({ChannelKind::brownian()}, 0.01));
    EXPECT_EQ(res.proportion.mean, 1.0);
    EXPECT_EQ(res.proportion.n, 30);
}

TEST(SyncProbability, ChaoticLorenzSeparates) {
    const auto res = sync_probability(lorenz(28.0, 0.0), PairSource::ball({0.0, 0.0, 0.0}, 10.0), 20.0, 1e-6, 30,
                                      ensemble({ChannelKind::brownian()}, 0.01));
    EXPECT_LE(res.proportion.mean, 0.1);
}

TEST(SyncProbability, WorkerCountDoesNotChangeResults) {
    auto c1 = ensemble({ChannelKind::brownian()}, 0.01, 7);
    auto c4 = c1;
    c4.workers = 4;
    const auto s = lorenz(0.5, 0.5);
    const auto a = sync_probability(s, PairSource::ball({0.0, 0.0, 0.0}, 10.0), 10.0, 1e-6, 40, c1);
    const auto b = sync_probability(s, PairSource::ball({0.0, 0.0, 0.0}, 10.0), 10.0, 1e-6, 40, c4);
    ASSERT_EQ(a.final_distance.size(), b.final_distance.size());
    for (std::size_t i = 0; i < a.final_distance.size(); ++i) {
        EXPECT_EQ(a.final_distance[i], b.final_distance[i]);
    }
    EXPECT_EQ(a.proportion.mean, b.proportion.mean);
}

TEST(SyncProbability, RejectsEmptyEnsemble) {
    EXPECT_THROW(sync_probability(lorenz(0.5, 0.5), PairSource::fixed_pair({0, 0, 0}, {1, 1, 1}), 1.0, 1e-6, 0,
                                  ensemble({ChannelKind::brownian()}, 0.01)),
                 ParameterError);
}

TEST(Pullback, LinearDiameterDecays) {
    const std::vector<std::vector<double>> pts{{1.0, 0.0}, {-1.0, 0.0}, {0.0, 0.5}};
    const auto res = pullback_diameter(minus_identity(2), pts, {1.0, 2.0, 4.0}, 3,
                                       ensemble({ChannelKind::brownian(), ChannelKind::brownian()}, 0.01));
    for (const auto& row : res.diameter) {
        for (std::size_t j = 0; j < 3; ++j) {
            const double t = std::vector<double>{1.0, 2.0, 4.0}[j];
            EXPECT_NEAR(row[j], 2.0 * std::exp(-t), 2.0 * 0.01);
        }
    }
}

TEST(Pullback, ReproducibleAndNested) {
    const std::vector<std::vector<double>> pts{{1.0, 0.0, 0.0}, {0.0, 3.0, -1.0}, {-2.0, 1.0, 2.0}};
    const auto cfg = ensemble({ChannelKind::brownian()}, 0.01, 5);
    const auto a = pullback_diameter(lorenz(0.5, 0.5), pts, {1.0, 3.0}, 4, cfg);
    const auto b = pullback_diameter(lorenz(0.5, 0.5), pts, {1.0, 3.0}, 4, cfg);
    EXPECT_EQ(a.diameter, b.diameter);
    EXPECT_EQ(a.path_fingerprint, b.path_fingerprint);
    // A shorter horizon list sees the same frozen past.
    const auto c = pullback_diameter(lorenz(0.5, 0.5), pts, {1.0}, 4, cfg);
    for (std::size_t r = 0; r < 4; ++r) {
        EXPECT_EQ(c.diameter[r][0], a.diameter[r][0]);
    }
}

TEST(Pullback, NoisyLorenzCollapses) {
    rng::Cursor cur(rng::Stream(4, 0, 0));
    std::vector<std::vector<double>> pts;
    for (int i = 0; i < 100; ++i) {
        pts.push_back(uniform_in_ball(std::vector<double>{0.0, 0.0, 0.0}, 30.0, cur));
    }
    const auto res = pullback_diameter(lorenz(0.5, 0.5), pts, {50.0}, 50, ensemble({ChannelKind::brownian()}, 0.01));
    int small = 0;
    for (const auto& row : res.diameter) {
        small += row[0] <= 1e-4 ? 1 : 0;
    }
    EXPECT_GE(small, 48);
}

TEST(Certify, LinearContractionIsCertified) {
    const auto s = minus_identity(2);
    const auto path = sample_path({ChannelKind::zero(), ChannelKind::zero()}, TimeGrid::over(0.0, 1.0, 0.01), 0, 0);
    CertifyOptions o;
    o.target_radius = 0.5;
    o.h = 0.05;
    o.mode = GrowthMode::constant;
    o.lambda_growth = -1.0;
    o.verified = verified_linear(s, -1.0);
    const auto c = certify_ball_image(s, std::vector<double>{0.0, 0.0}, 1.0, path, 1.0, o);
    EXPECT_TRUE(c.certified);
    EXPECT_NEAR(c.worst_distance, std::exp(-1.0), 0.01);
    EXPECT_GE(c.slack, 0.0);
    EXPECT_LE(c.worst_distance + c.tube_radius, 0.5);

    o.mode = GrowthMode::adaptive;
    o.verified.reset();
    const auto a = certify_ball_image(s, std::vector<double>{0.0, 0.0}, 1.0, path, 1.0, o);
    EXPECT_TRUE(a.certified);
}

TEST(Certify, ConstantModeNeedsVerifiedRate) {
    const auto s = minus_identity(1);
    const auto path = sample_path({ChannelKind::zero()}, TimeGrid::over(0.0, 1.0, 0.01), 0, 0);
    CertifyOptions o;
    o.mode = GrowthMode::constant;
    o.lambda_growth = -1.0;
    EXPECT_THROW(certify_ball_image(s, std::vector<double>{0.0}, 1.0, path, 1.0, o), PreconditionError);
    o.verified = verified_linear(s, -0.5);
    EXPECT_THROW(certify_ball_image(s, std::vector<double>{0.0}, 1.0, path, 1.0, o), PreconditionError);
}

TEST(Certify, CoarseMeshRefuses) {
    const auto s = minus_identity(2);
    const auto path = sample_path({ChannelKind::zero(), ChannelKind::zero()}, TimeGrid::over(0.0, 1.0, 0.01), 0, 0);
    CertifyOptions o;
    o.target_radius = 0.6;
    o.h = 1.5;
    o.mode = GrowthMode::constant;
    o.lambda_growth = 0.5;
    o.verified = verified_linear(s, 0.5);
    const auto c = certify_ball_image(s, std::vector<double>{0.0, 0.0}, 1.0, path, 1.0, o);
    // The true image is the ball of radius (1 - dt)^100 < 0.6.
    EXPECT_LT(std::pow(0.99, 100), 0.6);
    EXPECT_FALSE(c.certified);
    EXPECT_LT(c.slack, 0.0);
}

TEST(Certify, BudgetIsEnforced) {
    const auto s = minus_identity(3);
    const auto path = sample_path({ChannelKind::zero(), ChannelKind::zero(), ChannelKind::zero()},
                                  TimeGrid::over(0.0, 1.0, 0.01), 0, 0);
    CertifyOptions o;
    o.h = 0.01;
    EXPECT_THROW(certify_ball_image(s, std::vector<double>{0.0, 0.0, 0.0}, 1.0, path, 1.0, o), BudgetError);
    EXPECT_GT(mesh_size(3, 1.0, 0.01), 1'000'000);
    EXPECT_EQ(mesh_size(1, 1.0, 0.5), 5);
}

TEST(Certify, GrantedCertificatesAreSound) {
    // A = [[-1, 2], [0, -1]] has transient growth; the exact flow is
    // e^{-t} [[1, 2t], [0, 1]].
    const auto s = build_system("linear_d", {{"d", 2}, {"a_0_0", -1.0}, {"a_0_1", 2.0}, {"a_1_1", -1.0}});
    const auto path = sample_path({ChannelKind::zero(), ChannelKind::zero()}, TimeGrid::over(0.0, 3.0, 0.001), 0, 0);
    CertifyOptions o;
    o.h = 0.1;
    o.target_radius = 0.9;
    const std::vector<double> ts{0.5, 1.0, 2.0, 3.0};
    const auto certs = certify_ball_image_times(s, std::vector<double>{0.0, 0.0}, 1.0, path, ts, o);
    rng::Cursor cur(rng::Stream(10, 0, 0));
    int granted = 0;
    for (std::size_t j = 0; j < ts.size(); ++j) {
        if (!certs[j].certified) {
            continue;
        }
        ++granted;
        // Exact images of the discrete (Euler) map: (I + dt A)^n.
        const double dt = 0.001;
        const auto n = static_cast<int>(std::llround(ts[j] / dt));
        const double a = std::pow(1.0 - dt, n);
        const double b = 2.0 * dt * n * std::pow(1.0 - dt, n - 1);
        for (int i = 0; i < 10000; ++i) {
            const auto p = uniform_in_ball(std::vector<double>{0.0, 0.0}, 1.0, cur);
            EXPECT_LE(std::hypot(a * p[0] + b * p[1], a * p[1]), 0.9);
        }
    }
    EXPECT_GE(granted, 1);
}

TEST(Certify, MonotoneShortcutBracketsInteriorImages) {
    const auto s = build_system("cubic1d", {{"sigma", 1.0}});
    rng::Cursor cur(rng::Stream(11, 0, 0));
    for (int r = 0; r < 20; ++r) {
        const auto path = sample_path({ChannelKind::poisson(1.0)}, TimeGrid::over(0.0, 3.0, 0.01), 2,
                                      static_cast<std::uint64_t>(r));
        CertifyOptions o;
        const auto c = certify_ball_image(s, std::vector<double>{1.0}, 0.5, path, 3.0, o);
        EXPECT_TRUE(c.monotone);
        EXPECT_EQ(c.n_mesh, 2);
        const double lo = integrate_final(s, std::vector<double>{0.5}, path, Scheme::tamed_euler)[0];
        const double hi = integrate_final(s, std::vector<double>{1.5}, path, Scheme::tamed_euler)[0];
        for (int i = 0; i < 1000; ++i) {
            const double x = 0.5 + cur.uniform();
            const double y = integrate_final(s, std::vector<double>{x}, path, Scheme::tamed_euler)[0];
            ASSERT_GE(y, lo);
            ASSERT_LE(y, hi);
        }
        EXPECT_NEAR(c.worst_distance, std::max(std::abs(lo - 1.0), std::abs(hi - 1.0)), 1e-12);
    }
}

TEST(Recurrence, PoissonCubicWitness) {
    const auto s = build_system("cubic1d", {{"sigma", 1.0}});
    std::vector<double> ts;
    for (int t = 1; t <= 10; ++t) {
        ts.push_back(t);
    }
    const auto rec = recurrence_probability(s, std::vector<double>{1.0}, 0.5, ts, 100, {},
                                            ensemble({ChannelKind::poisson(1.0)}, 0.01));
    EXPECT_TRUE(rec.monotone);
    EXPECT_GT(rec.best_stat().ci_low, 0.0);
}

TEST(Recurrence, ChaoticSaddleExpelsBall) {
    std::vector<double> ts{1.0, 2.0, 5.0};
    CertifyOptions o;
    o.h = 0.05;
    const auto rec = recurrence_probability(lorenz(28.0, 0.0), std::vector<double>{0.0, 0.0, 0.0}, 0.1, ts, 30, o,
                                            ensemble({ChannelKind::brownian()}, 0.01));
    for (const auto& st : rec.per_t) {
        EXPECT_EQ(st.mean, 0.0);
    }
}

TEST(Wilson, CoverageAtPointThree) {
    rng::Cursor cur(rng::Stream(12, 0, 0));
    int covered = 0;
    for (int rep = 0; rep < 1000; ++rep) {
        int hits = 0;
        for (int i = 0; i < 100; ++i) {
            hits += cur.uniform() < 0.3 ? 1 : 0;
        }
        const auto st = proportion_stat(hits, 100, "p");
        covered += st.ci_low <= 0.3 && 0.3 <= st.ci_high ? 1 : 0;
        ASSERT_LE(st.ci_low, st.mean);
        ASSERT_LE(st.mean, st.ci_high);
    }
    EXPECT_GE(covered, 930);
}

TEST(Verdict, GeometricSynchronizes) {
    VerdictOptions o;
    o.n_reps = 40;
    const auto rep = synchronization_verdict(build_system("geometric1d", {{"sigma", 1.0}}), std::vector<double>{0.0},
                                             1.0, o, ensemble({ChannelKind::brownian()}, 0.01));
    EXPECT_EQ(rep.verdict, Verdict::evidence_for) << rep.reason;
}

TEST(Verdict, DegenerateDoubleWellAgainst) {
    VerdictOptions o;
    o.n_reps = 40;
    const auto s = build_system("doublewell_degenerate", {{"d", 2}, {"n", 1}, {"sigma", 0.25}});
    const auto rep = synchronization_verdict(s, std::vector<double>{0.0, 0.0}, 1.0, o,
                                             ensemble({ChannelKind::brownian()}, 0.01));
    EXPECT_EQ(rep.verdict, Verdict::evidence_against) << rep.reason;
}

TEST(Verdict, NoisyLorenzSynchronizes) {
    VerdictOptions o;
    o.n_reps = 40;
    o.certify.weights = {0.1, 1.0, 1.0};
    const auto rep = synchronization_verdict(lorenz(0.5, 0.5), std::vector<double>{0.0, 0.0, 0.0}, 1.0, o,
                                             ensemble({ChannelKind::brownian()}, 0.01));
    EXPECT_EQ(rep.verdict, Verdict::evidence_for) << rep.reason;
    EXPECT_EQ(to_string(rep.verdict), "evidence-for-synchronization");
}
