#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "shapereg/coefficients.hpp"
#include "shapereg/execution.hpp"
#include "shapereg/geodesic.hpp"
#include "shapereg/mesh.hpp"

namespace shapereg {

enum class Method { LR, GR, GRLR };

std::string to_string(Method method);
// Accepts lr, gr, grlr in any case. Throws InputError.
Method parse_method(const std::string& name);

struct TimeNormalization {
    double shift = 0.0;
    double scale = 1.0;

    double apply(double raw) const { return (raw - shift) / scale; }
    double invert(double normalized) const { return shift + scale * normalized; }
};

struct NormalizedTimes {
    std::vector<double> values;
    TimeNormalization map;
};

// Affine map sending min(x) to 0 and max(x) to 1. Throws InputError when all
// values coincide.
NormalizedTimes normalize_times(std::span<const double> x);

struct RegressionData {
    std::vector<double> x;
    std::vector<TriangleMesh> y;

    // n >= 2, two distinct x values, one shared topology.
    void validate() const;
};

struct OptimizerConfig {
    int max_iter = 100;
    double rel_tol = 1e-6;       // stop when the relative loss decrease drops below
    double armijo = 1e-4;
    double shrink = 0.5;
    int max_backtracks = 30;
    int history = 8;             // L-BFGS memory; 0 gives preconditioned gradient descent
    Execution execution = Execution::parallel;  // across samples within one loss evaluation

    void validate() const;
};

struct FitResult {
    Method method = Method::LR;
    TriangleMesh intercept;
    TangentField slope;
    double loss = 0.0;
    int iterations = 0;
    double wall_seconds = 0.0;
    bool converged = false;
    TimeNormalization normalization;

    std::vector<double> loss_trace;  // loss after every accepted step, initial value first
    std::string message;             // why the optimizer stopped
    std::int64_t exp_calls = 0;
    std::int64_t log_calls = 0;
    double assembly_seconds = 0.0;
};

// Closed-form least squares per coordinate on the normalized x.
FitResult fit_linear(const RegressionData& data);

// Minimizes 1/2 sum_i ||Log(Exp(p, x_i v), y_i)||^2 from the LR solution.
FitResult fit_geodesic(const RegressionData& data, const MetricCoefficients& c, const SolverConfig& cfg,
                       const OptimizerConfig& opt = {});

// Minimizes 1/2 sum_i ||Exp(p, x_i v) - y_i||^2 (Euclidean) from the LR solution.
FitResult fit_grlr(const RegressionData& data, const MetricCoefficients& c, const SolverConfig& cfg,
                   const OptimizerConfig& opt = {});

FitResult fit(Method method, const RegressionData& data, const MetricCoefficients& c, const SolverConfig& cfg,
              const OptimizerConfig& opt = {});

struct Prediction {
    TriangleMesh mesh;
    double x_normalized = 0.0;
    bool extrapolated = false;  // x outside the fitted range
};

Prediction predict(const FitResult& fit, double x_raw, const MetricCoefficients& c, const SolverConfig& cfg);

struct Diagnostics {
    // Linear residual norms for LR and GRLR, geodesic ones for GR.
    std::vector<double> residual_norms;
    std::vector<bool> residual_converged;
    double r_squared = 0.0;  // Euclidean, about the per-vertex mean mesh
    std::vector<double> loss_trace;
    std::int64_t exp_calls = 0;
    std::int64_t log_calls = 0;
    double assembly_seconds = 0.0;
    double wall_seconds = 0.0;
};

Diagnostics diagnostics(const FitResult& fit, const RegressionData& data, const MetricCoefficients& c,
                        const SolverConfig& cfg);

} // namespace shapereg
