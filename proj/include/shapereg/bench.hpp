#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "shapereg/coefficients.hpp"
#include "shapereg/geodesic.hpp"
#include "shapereg/mesh.hpp"
#include "shapereg/path.hpp"
#include "shapereg/regression.hpp"

namespace shapereg {

// Meshes (1 - t_j) q_start + t_j q_end at t_j = j / (T - 1).
GeodesicPath line_sequence(const TriangleMesh& q_start, const TriangleMesh& q_end, std::size_t T);

// (1/D) sqrt( 1/(T N) sum_t sum_j |a_tj - b_tj|^2 ). Throws on grid mismatch.
double rmsd(const GeodesicPath& a, const GeodesicPath& b, double D);

struct TrialSpec {
    int level = 2;
    double deformation = 0.01;  // noise sigma as a fraction of the diameter
    int T = 5;
    int n_steps = 20;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrialRecord {
    TrialSpec spec;
    std::size_t n_vertices = 0;
    double diameter = 0.0;
    double rmsd = 0.0;
    double t_line_s = 0.0;
    double t_geodesic_s = 0.0;  // includes the Log solve
    double speed_ratio = 0.0;
    bool log_converged = false;
    int log_iterations = 0;
    double log_residual = 0.0;  // final Log objective relative to ||q - p||^2
};

// Ellipsoid at spec.level, noisy copy, Log between them, then RMSD between
// the sampled geodesic and the straight line. `cfg.n_steps` is replaced by
// spec.n_steps.
TrialRecord run_trial(const TrialSpec& spec, const MetricCoefficients& c, const SolverConfig& cfg);

struct GridConfig {
    std::vector<int> levels{1, 2};
    std::vector<double> deformations{0.01, 0.10, 0.50, 1.00};
    std::vector<int> T{5};
    std::vector<int> n_steps{5, 20};
    int seeds = 1;
    std::uint64_t base_seed = 0;

    void validate() const;
};

// Seed of the `index`-th member of a seed family; shared by every cell of a
// grid so deformations are compared on the same noise draws.
std::uint64_t trial_seed(std::uint64_t base_seed, std::uint64_t index);

// Cartesian product in the order level, deformation, T, n_steps, seed.
std::vector<TrialSpec> expand_grid(const GridConfig& grid);

// Runs trials concurrently on up to `workers` threads (kernels inside a trial
// then run serially). Records come back in spec order.
std::vector<TrialRecord> run_grid(const std::vector<TrialSpec>& specs, const MetricCoefficients& c,
                                  const SolverConfig& cfg, int workers = 1);

inline constexpr const char* kCsvHeader =
    "n_vertices,deformation,T,n_steps,seed,rmsd,t_line_s,t_geodesic_s,speed_ratio,log_converged";

void write_csv(std::ostream& os, const std::vector<TrialRecord>& records);
// Parses what write_csv produces. Throws InputError.
std::vector<TrialRecord> read_csv(std::istream& is);

double median(std::vector<double> values);

struct ThresholdCheck {
    bool passed = true;
    std::size_t rows = 0;      // rows considered
    std::size_t excluded = 0;  // rows skipped because their Log did not converge
    double worst_median = 0.0;
    std::string detail;
};

// Per (n_vertices, deformation, T, n_steps) cell with deformation in
// [lo, hi], the median RMSD over converged rows must stay below `limit`.
ThresholdCheck check_rmsd_threshold(const std::vector<TrialRecord>& records, double lo, double hi, double limit);

inline constexpr double kDeltaTestLimit = 5e-4;
inline constexpr double kSpreadTestLimit = 0.1;

struct DecisionThresholds {
    double spread = 0.5;  // largest spread for which LR's path error stays tolerable
    double noise = 0.01;  // largest noise for which linear residuals are accurate
    bool tolerate_path_error = true;
};

struct Decision {
    Method method = Method::GR;
    std::string rule;
};

Decision decide_method(double noise_frac, double spread_frac, const DecisionThresholds& thresholds = {});

} // namespace shapereg
