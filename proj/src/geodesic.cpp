#include "shapereg/geodesic.hpp"

#include <chrono>
#include <cmath>
#include <deque>
#include <limits>

#include <Eigen/SparseCholesky>
#ifdef SHAPEREG_HAVE_CHOLMOD
#include <Eigen/CholmodSupport>
#endif

namespace shapereg {

void SolverConfig::validate() const {
    if (n_steps < 1) throw InputError("n_steps must be >= 1");
    if (!(log_tol > 0.0)) throw InputError("log_tol must be > 0");
    if (log_max_iter < 1) throw InputError("log_max_iter must be >= 1");
    if (log_history < 0) throw InputError("log_history must be >= 0");
    if (!(fd_step > 0.0)) throw InputError("fd_step must be > 0");
}

// Cholesky factor of G in the pattern's permuted numbering. The pattern is
// already fill-reducing, so no further ordering is applied.
class GeodesicSolver::Factor {
public:
    explicit Factor(const Eigen::SparseMatrix<double>& m) {
#ifdef SHAPEREG_HAVE_CHOLMOD
        solver_.cholmod().nmethods = 1;
        solver_.cholmod().method[0].ordering = CHOLMOD_NATURAL;
        solver_.cholmod().postorder = 0;
#endif
        solver_.compute(m);
        if (solver_.info() != Eigen::Success) throw SolverError("metric matrix factorization failed");
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
#ifdef SHAPEREG_HAVE_CHOLMOD
        // CHOLMOD keeps scratch space in its common object
        std::lock_guard<std::mutex> lock(mutex_);
#endif
        return solver_.solve(rhs);
    }

private:
#ifdef SHAPEREG_HAVE_CHOLMOD
    mutable std::mutex mutex_;
    mutable Eigen::CholmodSupernodalLLT<Eigen::SparseMatrix<double>, Eigen::Lower> solver_;
#else
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::NaturalOrdering<int>> solver_;
#endif
};

namespace {

using Clock = std::chrono::steady_clock;

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// Relative position perturbation for second-order finite differences.
constexpr double kSecondOrderStep = 1e-5;

constexpr double kPcgTolerance = 1e-10;
constexpr int kPcgMaxIter = 24;
constexpr int kPcgRefreshAfter = 12;

} // namespace

GeodesicSolver::GeodesicSolver(TopologyPtr topology, const MetricCoefficients& coeffs, const SolverConfig& cfg,
                               double length_scale, std::shared_ptr<SolverStats> stats)
    : engine_(std::move(topology), coeffs, cfg.execution), cfg_(cfg), length_scale_(length_scale),
      stats_(stats ? std::move(stats) : std::make_shared<SolverStats>()) {
    cfg_.validate();
    if (!(length_scale_ > 0.0)) throw InputError("length scale must be positive");
}

GeodesicSolver::~GeodesicSolver() = default;

std::shared_ptr<const GeodesicSolver::Factor> GeodesicSolver::factorize(const Eigen::VectorXd& x) const {
    const auto start = Clock::now();
    Eigen::SparseMatrix<double> g = engine_.pattern().empty_matrix();
    engine_.assemble(x, g);
    auto factor = std::make_shared<const Factor>(g);
    stats_->assembly_ns += std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - start).count();
    ++stats_->factorizations;
    return factor;
}

std::shared_ptr<const GeodesicSolver::Factor> GeodesicSolver::base_factor(const Eigen::VectorXd& p) const {
    {
        std::lock_guard<std::mutex> lock(cache_mutex_);
        if (cached_factor_ && cached_point_.size() == p.size() && cached_point_ == p) return cached_factor_;
    }
    auto factor = factorize(p);
    std::lock_guard<std::mutex> lock(cache_mutex_);
    cached_point_ = p;
    cached_factor_ = factor;
    return factor;
}

Eigen::VectorXd GeodesicSolver::direct_solve(const Factor& factor, const Eigen::VectorXd& rhs) const {
    return engine_.from_permuted(factor.solve(engine_.to_permuted(rhs)));
}

Eigen::VectorXd GeodesicSolver::solve_near(const Eigen::VectorXd& x, const Eigen::VectorXd& rhs,
                                           std::shared_ptr<const Factor>& factor, const Eigen::VectorXd* guess,
                                           bool* fell_back) const {
    if (fell_back) *fell_back = false;
    if (!factor) {
        factor = factorize(x);
        return direct_solve(*factor, rhs);
    }
    if (rhs.isZero(0.0)) return Eigen::VectorXd::Zero(rhs.size());

    // Stop once the preconditioned residual, an estimate of the error in the
    // G-norm, is small relative to the solution's own G-norm.
    const detail::FaceState state = engine_.face_state(x);
    Eigen::VectorXd y = guess ? *guess : direct_solve(*factor, rhs);
    Eigen::VectorXd r = rhs - engine_.apply(state, y);
    Eigen::VectorXd z = direct_solve(*factor, r);
    double rz = r.dot(z);
    const auto small = [&](double rz_now) { return rz_now <= kPcgTolerance * kPcgTolerance * std::abs(y.dot(rhs)); };
    int iterations = 0;
    bool converged = small(rz);
    Eigen::VectorXd d = z;
    while (!converged && iterations < kPcgMaxIter) {
        ++iterations;
        const Eigen::VectorXd gd = engine_.apply(state, d);
        const double curvature = d.dot(gd);
        if (!(curvature > 0.0)) break;
        const double alpha = rz / curvature;
        y += alpha * d;
        r -= alpha * gd;
        z = direct_solve(*factor, r);
        const double rz_next = r.dot(z);
        converged = small(rz_next);
        d = z + (rz_next / rz) * d;
        rz = rz_next;
    }
    if (!converged) {
        if (fell_back) *fell_back = true;
        factor = factorize(x);
        return direct_solve(*factor, rhs);
    }
    if (iterations > kPcgRefreshAfter) factor = factorize(x);
    return y;
}

Eigen::VectorXd GeodesicSolver::metric_apply(const Eigen::VectorXd& x, const Eigen::VectorXd& v) const {
    return engine_.apply(x, v);
}

Eigen::VectorXd GeodesicSolver::metric_solve(const Eigen::VectorXd& x, const Eigen::VectorXd& r) const {
    return direct_solve(*base_factor(x), r);
}

Eigen::VectorXd GeodesicSolver::force(const Eigen::VectorXd& x, const Eigen::VectorXd& v) const {
    return 0.5 * engine_.bilinear_gradient(x, v, v, cfg_.derivatives, cfg_.fd_step * length_scale_);
}

Eigen::VectorXd GeodesicSolver::shoot(const Eigen::VectorXd& p, const Eigen::VectorXd& v, Trajectory* record) const {
    ++stats_->exp_calls;
    const int n = cfg_.n_steps;
    const double dt = 1.0 / n;
    if (record) {
        record->clear();
        record->positions.reserve(static_cast<std::size_t>(n) + 1);
        record->velocities.reserve(static_cast<std::size_t>(n));
        record->positions.push_back(p);
        record->factors.resize(static_cast<std::size_t>(n));
    } else if (v.isZero(0.0)) {
        return p;
    }

    Eigen::VectorXd x = p;
    Eigen::VectorXd vel = v;
    Eigen::VectorXd mu = engine_.apply(p, v);
    std::shared_ptr<const Factor> factor;
    if (n > 1) factor = base_factor(p);
    // Once the metric moves too fast for the lagged preconditioner, every
    // remaining step is factorized directly.
    bool direct = false;
    for (int k = 0; k < n; ++k) {
        const Eigen::VectorXd f = force(x, vel);
        Eigen::VectorXd next = x + dt * vel;
        mu += dt * f;
        if (record) record->velocities.push_back(vel);
        if (k + 1 < n) {
            if (direct) {
                factor = factorize(next);
                vel = direct_solve(*factor, mu);
            } else {
                vel = solve_near(next, mu, factor, &vel, &direct);
            }
            if (!vel.allFinite()) throw NonFiniteError("geodesic velocity became non-finite");
            if (record) record->factors[static_cast<std::size_t>(k) + 1] = factor;
        }
        x = std::move(next);
        if (record) record->positions.push_back(x);
    }
    if (!x.allFinite()) throw NonFiniteError("geodesic left the finite range");
    return x;
}

std::vector<Eigen::VectorXd> GeodesicSolver::shoot_samples(const Eigen::VectorXd& p, const Eigen::VectorXd& v,
                                                           const std::vector<double>& times) const {
    Trajectory rec;
    shoot(p, v, &rec);
    const int n = cfg_.n_steps;
    std::vector<Eigen::VectorXd> out;
    out.reserve(times.size());
    for (double t : times) {
        if (t <= 0.0) {
            out.push_back(rec.positions.front());
            continue;
        }
        if (t >= 1.0) {
            out.push_back(rec.positions.back());
            continue;
        }
        const double s = t * n;
        const auto k = static_cast<std::size_t>(std::floor(s));
        const double frac = s - static_cast<double>(k);
        if (frac == 0.0)
            out.push_back(rec.positions[k]);
        else
            out.push_back(rec.positions[k] + frac * (rec.positions[k + 1] - rec.positions[k]));
    }
    return out;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> GeodesicSolver::pullback(const Trajectory& rec,
                                                                     const Eigen::VectorXd& seed) const {
    const std::size_t n = rec.positions.size() - 1;
    if (n != static_cast<std::size_t>(cfg_.n_steps) || rec.velocities.size() != n || rec.factors.size() != n)
        throw InputError("trajectory was not recorded by this solver");
    const double dt = 1.0 / static_cast<double>(n);
    const auto backend = cfg_.derivatives;
    const double fd = cfg_.fd_step * length_scale_;

    Eigen::VectorXd g = seed;                               // adjoint of x_j
    Eigen::VectorXd m = Eigen::VectorXd::Zero(seed.size());  // adjoint of mu_j
    Eigen::VectorXd w = Eigen::VectorXd::Zero(seed.size());  // adjoint of v_j

    for (std::size_t j = n; j >= 1; --j) {
        if (j < n) {
            std::shared_ptr<const Factor> factor = rec.factors[j];
            const Eigen::VectorXd z = solve_near(rec.positions[j], w, factor, nullptr);
            m += z;
            g -= engine_.bilinear_gradient(rec.positions[j], z, rec.velocities[j], backend, fd);
        }
        const Eigen::VectorXd& xp = rec.positions[j - 1];
        const Eigen::VectorXd& vp = rec.velocities[j - 1];
        Eigen::VectorXd new_w = dt * g;
        const double mnorm = inf_norm(m);
        if (mnorm > 0.0) {
            const double eps = kSecondOrderStep * length_scale_ / mnorm;
            const Eigen::VectorXd xu = xp + eps * m;
            const Eigen::VectorXd xd = xp - eps * m;
            // force Jacobian in x, transposed: half the Hessian of v^T G(x) v along m
            const Eigen::VectorXd hess = (engine_.bilinear_gradient(xu, vp, vp, backend, fd) -
                                          engine_.bilinear_gradient(xd, vp, vp, backend, fd)) /
                                         (2.0 * eps);
            // force Jacobian in v, transposed: (D_m G) v
            const Eigen::VectorXd dgv = (engine_.apply(xu, vp) - engine_.apply(xd, vp)) / (2.0 * eps);
            new_w += dt * dgv;
            g += dt * 0.5 * hess;
        }
        w = std::move(new_w);
    }
    // mu_0 = G(x_0) v_0
    const Eigen::VectorXd& x0 = rec.positions.front();
    const Eigen::VectorXd& v0 = rec.velocities.front();
    if (inf_norm(m) > 0.0) {
        w += engine_.apply(x0, m);
        g += engine_.bilinear_gradient(x0, m, v0, backend, fd);
    }
    return {std::move(g), std::move(w)};
}

double GeodesicSolver::log_objective(const Eigen::VectorXd& p, const Eigen::VectorXd& q, const Eigen::VectorXd& v,
                                     Trajectory* record) const {
    const Eigen::VectorXd r = shoot(p, v, record) - q;
    return r.dot(engine_.apply(p, r));
}

Eigen::VectorXd GeodesicSolver::log_gradient(const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                                             const Trajectory& record) const {
    const Eigen::VectorXd r = record.positions.back() - q;
    return pullback(record, 2.0 * engine_.apply(p, r)).second;
}

Eigen::VectorXd GeodesicSolver::log_gradient(const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                                             const Eigen::VectorXd& v) const {
    Trajectory rec;
    shoot(p, v, &rec);
    return log_gradient(p, q, rec);
}

LogResult GeodesicSolver::log(const Eigen::VectorXd& p, const Eigen::VectorXd& q) const {
    ++stats_->log_calls;
    LogResult out;
    const Eigen::VectorXd chord = q - p;
    out.reference = chord.dot(engine_.apply(p, chord));
    const double target = cfg_.log_tol * out.reference;

    // The chord can overshoot into degenerate meshes for large deformations.
    Eigen::VectorXd v = chord;
    Trajectory rec;
    double obj = 0.0;
    bool started = false;
    for (int attempt = 0; attempt < 12 && !started; ++attempt) {
        try {
            obj = log_objective(p, q, v, &rec);
            started = true;
        } catch (const Error&) {
            v *= 0.5;
        }
    }
    if (!started) {
        out.velocity = TangentField(engine_.topology_ptr(), chord);
        out.objective = std::numeric_limits<double>::infinity();
        return out;
    }

    // L-BFGS in the G(p) inner product: the initial inverse Hessian is a
    // multiple of G(p)^{-1}, so the first step is the Riemannian gradient.
    const auto at_p = base_factor(p);
    const auto precondition = [&](const Eigen::VectorXd& r) { return direct_solve(*at_p, r); };
    std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> history;  // (s, y)
    const auto history_size = static_cast<std::size_t>(cfg_.log_history);

    Eigen::VectorXd grad = log_gradient(p, q, rec);
    while (obj > target && out.iterations < cfg_.log_max_iter) {
        Eigen::VectorXd dir;
        double slope = 0.0;
        for (int pass = 0; pass < 2; ++pass) {
            Eigen::VectorXd u = grad;
            std::vector<double> alpha(history.size()), rho(history.size());
            for (std::size_t i = history.size(); i-- > 0;) {
                rho[i] = 1.0 / history[i].second.dot(history[i].first);
                alpha[i] = rho[i] * history[i].first.dot(u);
                u -= alpha[i] * history[i].second;
            }
            Eigen::VectorXd z = precondition(u);
            if (history.empty()) {
                z *= 0.5;
            } else {
                const auto& [s, y] = history.back();
                z *= s.dot(y) / y.dot(precondition(y));
            }
            for (std::size_t i = 0; i < history.size(); ++i) {
                const double beta = rho[i] * history[i].second.dot(z);
                z += (alpha[i] - beta) * history[i].first;
            }
            dir = -z;
            slope = grad.dot(dir);
            if (slope < 0.0 || history.empty()) break;
            history.clear();
        }
        if (!(slope < 0.0)) break;

        bool accepted = false;
        double step = 1.0;
        Trajectory trial;
        double trial_obj = 0.0;
        for (int shrink = 0; shrink < 30; ++shrink, step *= 0.5) {
            try {
                trial_obj = log_objective(p, q, v + step * dir, &trial);
            } catch (const Error&) {
                continue;
            }
            if (trial_obj <= obj + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            if (history.empty()) break;
            history.clear();
            continue;
        }

        const double decrease = (obj - trial_obj) / obj;
        v += step * dir;
        obj = trial_obj;
        rec = std::move(trial);
        ++out.iterations;
        if (obj <= target || decrease < cfg_.log_tol) break;

        Eigen::VectorXd next_grad = log_gradient(p, q, rec);
        if (history_size > 0) {
            Eigen::VectorXd s = step * dir;
            Eigen::VectorXd y = next_grad - grad;
            if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
                history.emplace_back(std::move(s), std::move(y));
                if (history.size() > history_size) history.pop_front();
            }
        }
        grad = std::move(next_grad);
    }
    out.velocity = TangentField(engine_.topology_ptr(), std::move(v));
    out.objective = obj;
    out.converged = obj <= target;
    return out;
}

TriangleMesh exp_map(const TriangleMesh& p, const TangentField& v, const MetricCoefficients& c,
                     const SolverConfig& cfg) {
    require_field_on(p, v);
    const GeodesicSolver solver(p.topology(), c, cfg, mesh_diameter(p));
    return p.with_coords(solver.shoot(p.coords(), v.values()));
}

GeodesicPath exp_path(const TriangleMesh& p, const TangentField& v, const MetricCoefficients& c,
                      const SolverConfig& cfg, std::size_t samples) {
    require_field_on(p, v);
    const GeodesicSolver solver(p.topology(), c, cfg, mesh_diameter(p));
    GeodesicPath path;
    path.times = GeodesicPath::uniform_times(samples);
    for (auto& x : solver.shoot_samples(p.coords(), v.values(), path.times))
        path.meshes.push_back(p.with_coords(std::move(x)));
    return path;
}

LogResult log_map(const TriangleMesh& p, const TriangleMesh& q, const MetricCoefficients& c, const SolverConfig& cfg) {
    require_same_topology(*p.topology(), *q.topology());
    const GeodesicSolver solver(p.topology(), c, cfg, mesh_diameter(p));
    return solver.log(p.coords(), q.coords());
}

double distance(const TriangleMesh& p, const TriangleMesh& q, const MetricCoefficients& c, const SolverConfig& cfg) {
    require_same_topology(*p.topology(), *q.topology());
    const GeodesicSolver solver(p.topology(), c, cfg, mesh_diameter(p));
    const LogResult log = solver.log(p.coords(), q.coords());
    if (!log.converged)
        throw SolverError("Log did not converge (objective " + std::to_string(log.objective) + " after " +
                          std::to_string(log.iterations) + " iterations)");
    const Eigen::VectorXd& v = log.velocity.values();
    return std::sqrt(std::max(0.0, v.dot(solver.metric_apply(p.coords(), v))));
}

std::vector<double> energy_profile(const GeodesicPath& path, const MetricCoefficients& c) {
    path.validate();
    const detail::MetricEngine engine(path.meshes.front().topology(), c, Execution::serial);
    std::vector<double> out;
    out.reserve(path.size() - 1);
    for (std::size_t t = 0; t + 1 < path.size(); ++t) {
        const double dt = path.times[t + 1] - path.times[t];
        const Eigen::VectorXd vel = (path.meshes[t + 1].coords() - path.meshes[t].coords()) / dt;
        out.push_back(engine.bilinear(path.meshes[t].coords(), vel, vel));
    }
    return out;
}

} // namespace shapereg
