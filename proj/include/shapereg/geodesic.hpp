#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "shapereg/coefficients.hpp"
#include "shapereg/detail/metric_engine.hpp"
#include "shapereg/execution.hpp"
#include "shapereg/mesh.hpp"
#include "shapereg/path.hpp"

namespace shapereg {

using detail::DerivativeBackend;

struct SolverConfig {
    int n_steps = 20;         // forward Euler steps on [0, 1]
    double log_tol = 1e-6;    // relative objective tolerance of the Log solver
    int log_max_iter = 200;
    int log_history = 8;      // L-BFGS memory of the Log solver; 0 gives plain gradient descent
    double fd_step = 1e-6;    // finite-difference step, fraction of the base diameter
    DerivativeBackend derivatives = DerivativeBackend::automatic;
    Execution execution = Execution::parallel;

    void validate() const;
};

// Work counters shared by every solver built from one configuration; used by
// regression diagnostics.
struct SolverStats {
    std::atomic<std::int64_t> exp_calls{0};
    std::atomic<std::int64_t> log_calls{0};
    std::atomic<std::int64_t> assembly_ns{0};
    std::atomic<std::int64_t> factorizations{0};

    void reset() {
        exp_calls = 0;
        log_calls = 0;
        assembly_ns = 0;
        factorizations = 0;
    }
};

struct LogResult {
    TangentField velocity;
    double objective = 0.0;   // ||Exp(p, v) - q||^2 in G(p)
    double reference = 0.0;   // ||q - p||^2 in G(p)
    int iterations = 0;
    bool converged = false;
};

// Geodesic shooting in momentum form. The state is (x, mu) with mu = G(x) xdot:
//   x_{k+1}  = x_k + dt v_k
//   mu_{k+1} = mu_k + dt * 1/2 grad_x (v_k^T G(x_k) v_k)
//   v_{k+1}  = G(x_{k+1})^{-1} mu_{k+1}
// Christoffel symbols never appear. The solve for v_{k+1} runs preconditioned
// conjugate gradients against the Cholesky factor of a nearby G, which is
// refreshed only when the iteration count climbs.
class GeodesicSolver {
private:
    class Factor;

public:
    // What the adjoint pass needs from one forward integration.
    struct Trajectory {
        std::vector<Eigen::VectorXd> positions;   // x_0 .. x_n
        std::vector<Eigen::VectorXd> velocities;  // v_0 .. v_{n-1}
        // Preconditioner used for the solve at x_j, j = 1 .. n-1. Usually shared
        // between consecutive steps.
        std::vector<std::shared_ptr<const Factor>> factors;

        void clear() {
            positions.clear();
            velocities.clear();
            factors.clear();
        }
    };

    GeodesicSolver(TopologyPtr topology, const MetricCoefficients& coeffs, const SolverConfig& cfg,
                   double length_scale, std::shared_ptr<SolverStats> stats = nullptr);
    ~GeodesicSolver();
    GeodesicSolver(const GeodesicSolver&) = delete;
    GeodesicSolver& operator=(const GeodesicSolver&) = delete;

    const detail::MetricEngine& engine() const { return engine_; }
    const SolverConfig& config() const { return cfg_; }
    double length_scale() const { return length_scale_; }
    const std::shared_ptr<SolverStats>& stats() const { return stats_; }

    // Endpoint of the Euler trajectory. `record` keeps what the adjoint needs.
    Eigen::VectorXd shoot(const Eigen::VectorXd& p, const Eigen::VectorXd& v, Trajectory* record = nullptr) const;

    // Euler polygon sampled at the given times in [0, 1].
    std::vector<Eigen::VectorXd> shoot_samples(const Eigen::VectorXd& p, const Eigen::VectorXd& v,
                                               const std::vector<double>& times) const;

    // Vector-Jacobian product of the endpoint map (p, v) -> x_n:
    // returns (J_p^T seed, J_v^T seed).
    std::pair<Eigen::VectorXd, Eigen::VectorXd> pullback(const Trajectory& record, const Eigen::VectorXd& seed) const;

    // Objective of the Log problem and its Euclidean gradient in v.
    double log_objective(const Eigen::VectorXd& p, const Eigen::VectorXd& q, const Eigen::VectorXd& v,
                         Trajectory* record = nullptr) const;
    Eigen::VectorXd log_gradient(const Eigen::VectorXd& p, const Eigen::VectorXd& q, const Eigen::VectorXd& v) const;

    LogResult log(const Eigen::VectorXd& p, const Eigen::VectorXd& q) const;

    // G(x) v and G(x)^{-1} r.
    Eigen::VectorXd metric_apply(const Eigen::VectorXd& x, const Eigen::VectorXd& v) const;
    Eigen::VectorXd metric_solve(const Eigen::VectorXd& x, const Eigen::VectorXd& r) const;

private:
    std::shared_ptr<const Factor> factorize(const Eigen::VectorXd& x) const;
    std::shared_ptr<const Factor> base_factor(const Eigen::VectorXd& p) const;
    // Solves G(x) y = rhs, preconditioned by `factor`; replaces `factor` by a
    // fresh one at x when it has drifted too far.
    Eigen::VectorXd solve_near(const Eigen::VectorXd& x, const Eigen::VectorXd& rhs,
                               std::shared_ptr<const Factor>& factor, const Eigen::VectorXd* guess,
                               bool* fell_back = nullptr) const;
    Eigen::VectorXd direct_solve(const Factor& factor, const Eigen::VectorXd& rhs) const;
    Eigen::VectorXd force(const Eigen::VectorXd& x, const Eigen::VectorXd& v) const;
    Eigen::VectorXd log_gradient(const Eigen::VectorXd& p, const Eigen::VectorXd& q, const Trajectory& record) const;

    detail::MetricEngine engine_;
    SolverConfig cfg_;
    double length_scale_;
    std::shared_ptr<SolverStats> stats_;

    mutable std::mutex cache_mutex_;
    mutable Eigen::VectorXd cached_point_;
    mutable std::shared_ptr<const Factor> cached_factor_;
};

TriangleMesh exp_map(const TriangleMesh& p, const TangentField& v, const MetricCoefficients& c,
                     const SolverConfig& cfg);

// Samples the Euler polygon of one integration pass at t_j = j / (samples - 1).
GeodesicPath exp_path(const TriangleMesh& p, const TangentField& v, const MetricCoefficients& c,
                      const SolverConfig& cfg, std::size_t samples);

// Limited-memory quasi-Newton descent on ||Exp(p, v) - q||^2_{G(p)} in the
// G(p) inner product, started at v = q - p.
// Non-convergence is reported in the result, not thrown.
LogResult log_map(const TriangleMesh& p, const TriangleMesh& q, const MetricCoefficients& c, const SolverConfig& cfg);

// ||Log(p, q)||_{G(p)}. Throws SolverError if the Log solve did not converge.
double distance(const TriangleMesh& p, const TriangleMesh& q, const MetricCoefficients& c, const SolverConfig& cfg);

// Squared speed of every segment of the path.
std::vector<double> energy_profile(const GeodesicPath& path, const MetricCoefficients& c);

} // namespace shapereg
