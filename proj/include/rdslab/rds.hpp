#pragma once

// Cocycle-level diagnostics: two-point motion, synchronization estimates,
// pullback diameters, certified ball images and recurrence.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rdslab/integrate.hpp"
#include "rdslab/noise.hpp"
#include "rdslab/rng.hpp"
#include "rdslab/stats.hpp"
#include "rdslab/systems.hpp"

namespace rdslab {

/// Shared settings of a replica ensemble. Replica i draws its path from
/// stream first_stream + i.
struct EnsembleConfig {
    std::vector<ChannelKind> kinds;
    double dt = 0.01;
    std::optional<Scheme> scheme;  // default_scheme(system) when unset
    std::uint64_t master_seed = 0;
    std::uint64_t first_stream = 0;
    int workers = 1;

    [[nodiscard]] Scheme scheme_for(const SystemSpec& system) const {
        return scheme ? *scheme : default_scheme(system);
    }
};

/// The system as seen along one path. Systems driven through an OU functional
/// get the OU path of channel 0 attached; others are returned unchanged.
SystemSpec bind_path(const SystemSpec& system, const NoisePath& path);

struct DistanceSeries {
    TimeGrid grid;
    std::vector<double> distance;  // one per grid point
    std::uint64_t path_fingerprint = 0;
};

/// d(phi_t(omega, x), phi_t(omega, y)) along one shared path.
DistanceSeries two_point_run(const SystemSpec& system, std::span<const double> x, std::span<const double> y,
                             const NoisePath& path, Scheme scheme, std::span<const double> weights = {});

/// Where pairs come from: a fixed pair, or two independent uniform points of a
/// Euclidean ball drawn per replica.
struct PairSource {
    enum class Kind { fixed, uniform_ball };
    Kind kind = Kind::fixed;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> center;
    double radius = 1.0;

    static PairSource fixed_pair(std::vector<double> x, std::vector<double> y) {
        return {Kind::fixed, std::move(x), std::move(y), {}, 1.0};
    }
    static PairSource ball(std::vector<double> center, double radius) {
        return {Kind::uniform_ball, {}, {}, std::move(center), radius};
    }
};

/// Uniform point of the Euclidean ball B(center, radius).
std::vector<double> uniform_in_ball(std::span<const double> center, double radius, rng::Cursor& cursor);

struct SyncResult {
    /// Proportion of non-blown-up replicas with terminal distance <= eta.
    EnsembleStat proportion;
    std::int64_t attempted = 0;
    std::int64_t blowups = 0;
    /// Terminal distance per replica, NaN for blow-ups.
    std::vector<double> final_distance;
};

SyncResult sync_probability(const SystemSpec& system, const PairSource& pairs, double t, double eta,
                            std::int64_t n_reps, const EnsembleConfig& config, std::span<const double> weights = {});

struct PullbackResult {
    std::vector<double> t_list;
    /// diameter[r][j]: replica r, horizon t_list[j].
    std::vector<std::vector<double>> diameter;
    std::vector<std::uint64_t> path_fingerprint;  // full two-sided path per replica
};

/// Evolves every point from -t to 0 along one two-sided path per replica and
/// records the diameter of the images at time 0.
PullbackResult pullback_diameter(const SystemSpec& system, const std::vector<std::vector<double>>& points,
                                 const std::vector<double>& t_list, std::int64_t n_reps,
                                 const EnsembleConfig& config, std::span<const double> weights = {});

/// Max pairwise distance of a point set.
double diameter(const std::vector<std::vector<double>>& points, std::span<const double> weights = {});

// ---------------------------------------------------------- certification

enum class GrowthMode {
    /// Tube radius r0 e^{lambda t} from a verified one-sided Lipschitz bound.
    constant,
    /// Per-step bound on the step map's weighted operator norm over the tube.
    adaptive,
};

std::string to_string(GrowthMode m);

struct CertifyOptions {
    double target_radius = 0.0;
    std::vector<double> target_center;  // defaults to the ball center
    std::vector<double> weights;        // defaults to all ones
    double h = 0.1;                     // mesh spacing in scaled coordinates
    /// Cells that miss the target at the last time are split in 2^d, up to
    /// this many times, while the total stays within the budget.
    int refine_depth = 0;
    GrowthMode mode = GrowthMode::adaptive;
    /// Constant mode only: the report that verified lambda_growth.
    std::optional<DriftConditionReport> verified;
    double lambda_growth = 0.0;
    std::int64_t budget = 1'000'000;
    bool monotone_shortcut = true;
    std::optional<Scheme> scheme;
};

struct BallImageCertificate {
    std::vector<double> center;
    double radius = 0.0;
    std::vector<double> target_center;
    double target_radius = 0.0;
    double t = 0.0;
    GrowthMode mode = GrowthMode::adaptive;
    double lambda_growth = 0.0;  // constant mode; effective rate log(r_t/r_0)/t otherwise
    std::vector<double> weights;
    double h = 0.0;
    std::int64_t n_mesh = 0;
    /// Largest weighted distance of a mesh image from the target center.
    double worst_distance = 0.0;
    /// Radius of the tube around each mesh image that covers the whole ball.
    double tube_radius = 0.0;
    double slack = 0.0;  // target_radius - worst_distance - tube_radius
    bool monotone = false;
    bool certified = false;
    std::string note;
};

/// Certifies phi_t(omega, B(z, R)) inside the target ball, where omega is the
/// path (t measured from its start). Never certifies when the bound fails.
BallImageCertificate certify_ball_image(const SystemSpec& system, std::span<const double> z, double R,
                                        const NoisePath& path, double t, const CertifyOptions& options);

/// One certificate per entry of t_list from a single propagation of the mesh.
std::vector<BallImageCertificate> certify_ball_image_times(const SystemSpec& system, std::span<const double> z,
                                                           double R, const NoisePath& path,
                                                           const std::vector<double>& t_list,
                                                           const CertifyOptions& options);

/// Number of mesh points certify_ball_image would use.
std::int64_t mesh_size(int dim, double R, double h);

struct RecurrenceResult {
    std::vector<double> t_list;
    std::vector<EnsembleStat> per_t;  // certified proportion at each t
    std::int64_t attempted = 0;
    std::int64_t blowups = 0;
    std::int64_t n_mesh = 0;
    bool monotone = false;
    /// Index into t_list of the largest Wilson lower bound (first on ties).
    std::size_t best = 0;
    [[nodiscard]] const EnsembleStat& best_stat() const { return per_t.at(best); }
};

/// Proportion of replicas whose certificate phi_t(B(z,R)) in B(target) is
/// granted. Default target: B(z, R/2).
RecurrenceResult recurrence_probability(const SystemSpec& system, std::span<const double> z, double R,
                                        const std::vector<double>& t_list, std::int64_t n_reps,
                                        const CertifyOptions& options, const EnsembleConfig& config);

// ----------------------------------------------------------------- verdict

enum class Verdict { evidence_for, evidence_against, inconclusive };

std::string to_string(Verdict v);

struct VerdictOptions {
    std::int64_t n_reps = 100;
    // (a) diameter decay on samples of B(z, eps)
    int ball_samples = 16;
    std::vector<double> decay_times{10.0, 20.0, 50.0};
    double diameter_tolerance = 1e-4;
    // (b) recurrence scan
    std::vector<double> r_grid{0.25, 0.5, 1.0, 2.0, 5.0};
    std::vector<double> t_grid{1.0, 2.0, 5.0, 10.0, 20.0};
    /// Mesh spacing as a fraction of the scanned radius.
    double h_fraction = 0.25;
    CertifyOptions certify;
    // (c) random pairs
    double pair_radius = 1.0;
    double sync_time = 100.0;
    double eta = 1e-6;
    double sync_level = 0.9;
};

struct VerdictReport {
    Verdict verdict = Verdict::inconclusive;
    EnsembleStat diameter_decay;
    EnsembleStat recurrence;
    double recurrence_R = 0.0;
    double recurrence_t = 0.0;
    EnsembleStat sync;
    std::int64_t blowups = 0;
    std::string scanned;
    std::string reason;
};

/// Combines diameter decay, recurrence and pair synchronization evidence.
/// evidence_for: all three lower bounds positive and the sync lower bound at
/// least sync_level. evidence_against: the sync upper bound below sync_level.
VerdictReport synchronization_verdict(const SystemSpec& system, std::span<const double> z, double eps,
                                      const VerdictOptions& options, const EnsembleConfig& config);

}  // namespace rdslab
