#include "shapereg/regression.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <deque>
#include <exception>
#include <optional>

namespace shapereg {

std::string to_string(Method method) {
    switch (method) {
    case Method::LR:
        return "LR";
    case Method::GR:
        return "GR";
    case Method::GRLR:
        return "GRLR";
    }
    return "?";
}

Method parse_method(const std::string& name) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (lower == "lr") return Method::LR;
    if (lower == "gr") return Method::GR;
    if (lower == "grlr") return Method::GRLR;
    throw InputError("unknown regression method '" + name + "' (expected lr, gr or grlr)");
}

NormalizedTimes normalize_times(std::span<const double> x) {
    if (x.size() < 2) throw InputError("need at least two x values");
    for (double value : x)
        if (!std::isfinite(value)) throw InputError("x values must be finite");
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    if (!(*hi > *lo)) throw InputError("x values are all equal");
    NormalizedTimes out;
    out.map.shift = *lo;
    out.map.scale = *hi - *lo;
    out.values.reserve(x.size());
    for (double value : x) out.values.push_back(out.map.apply(value));
    return out;
}

void RegressionData::validate() const {
    if (x.size() != y.size()) throw SizeMismatchError("x and y differ in length");
    if (y.size() < 2) throw InputError("regression needs at least two samples");
    normalize_times(x);
    for (std::size_t i = 1; i < y.size(); ++i) require_same_topology(*y.front().topology(), *y[i].topology());
}

void OptimizerConfig::validate() const {
    if (max_iter < 0) throw InputError("max_iter must be >= 0");
    if (!(rel_tol >= 0.0)) throw InputError("rel_tol must be >= 0");
    if (!(armijo > 0.0 && armijo < 1.0)) throw InputError("armijo constant must lie in (0, 1)");
    if (!(shrink > 0.0 && shrink < 1.0)) throw InputError("shrink factor must lie in (0, 1)");
    if (max_backtracks < 1) throw InputError("max_backtracks must be >= 1");
    if (history < 0) throw InputError("history must be >= 0");
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

// Runs fn(i) for every sample and rethrows the first failure (by index) after
// the loop, since exceptions must not leave an OpenMP region.
template <class Fn>
void for_each_sample(Execution exec, std::size_t n, Fn&& fn) {
    std::vector<std::exception_ptr> errors(n);
    for_each_index(exec, n, [&](std::size_t i) {
        try {
            fn(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    });
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// Loss value plus dL/dyhat_i for every sample.
struct Evaluation {
    double loss = 0.0;
    std::vector<Eigen::VectorXd> seeds;
    // Forward passes behind the predictions, reused by the gradient. Empty for
    // samples at x = 0, where the prediction is p itself.
    std::vector<GeodesicSolver::Trajectory> records;
};

enum class EvalStatus { ok, invalid, log_failed };

struct Descent {
    const RegressionData& data;
    const std::vector<double>& x;
    const GeodesicSolver& solver;
    const OptimizerConfig& opt;
    bool metric_preconditioner;  // GR measures residuals in G, so its Hessian carries G

    template <class Evaluate>
    void run(Eigen::VectorXd p, Eigen::VectorXd v, Evaluate&& evaluate, FitResult& out) const {
        const std::size_t n = x.size();
        const Eigen::Index m = p.size();
        double sx = 0.0, sxx = 0.0;
        for (double t : x) {
            sx += t;
            sxx += t * t;
        }
        const double det = static_cast<double>(n) * sxx - sx * sx;

        // Inverse of [[n, sx], [sx, sxx]] applied coordinate-wise, times G(p)^{-1} for GR.
        auto precondition = [&](const Eigen::VectorXd& g) {
            Eigen::VectorXd hp = g.head(m), hv = g.tail(m);
            if (metric_preconditioner) {
                hp = solver.metric_solve(p, hp);
                hv = solver.metric_solve(p, hv);
            }
            Eigen::VectorXd r(2 * m);
            r.head(m) = (sxx * hp - sx * hv) / det;
            r.tail(m) = (static_cast<double>(n) * hv - sx * hp) / det;
            return r;
        };

        Evaluation current;
        std::string failure;
        if (evaluate(p, v, current, failure) != EvalStatus::ok) {
            out.message = "loss undefined at the linear initialization: " + failure;
            finish(p, v, std::numeric_limits<double>::quiet_NaN(), out);
            return;
        }
        out.loss_trace.push_back(current.loss);
        // Below this the data are matched to solver precision.
        const double floor = current.loss * opt.rel_tol * opt.rel_tol;

        std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> history;  // (s, y)
        double gamma = 1.0;
        bool converged = false;
        int iterations = 0;
        Eigen::VectorXd g(2 * m);
        {
            const auto [gp, gv] = gradient(p, v, current);
            g << gp, gv;
        }
        while (iterations < opt.max_iter) {
            if (current.loss <= floor) {
                converged = true;
                out.message = current.loss == 0.0 ? "zero loss" : "loss at solver precision";
                break;
            }
            // two-loop recursion
            Eigen::VectorXd q = g;
            std::vector<double> alpha(history.size());
            for (std::size_t k = history.size(); k-- > 0;) {
                const auto& [s, y] = history[k];
                alpha[k] = s.dot(q) / s.dot(y);
                q -= alpha[k] * y;
            }
            Eigen::VectorXd d = gamma * precondition(q);
            for (std::size_t k = 0; k < history.size(); ++k) {
                const auto& [s, y] = history[k];
                d += s * (alpha[k] - y.dot(d) / s.dot(y));
            }
            d = -d;
            double slope = g.dot(d);
            if (!(slope < 0.0) && !history.empty()) {
                history.clear();
                gamma = 1.0;
                d = -precondition(g);
                slope = g.dot(d);
            }
            if (!(slope < 0.0)) {
                converged = true;
                out.message = "stationary point";
                break;
            }

            double step = 1.0;
            bool accepted = false;
            Evaluation trial;
            for (int k = 0; k < opt.max_backtracks; ++k, step *= opt.shrink) {
                std::string why;
                if (evaluate(p + step * d.head(m), v + step * d.tail(m), trial, why) != EvalStatus::ok) continue;
                if (trial.loss <= current.loss + opt.armijo * step * slope) {
                    accepted = true;
                    break;
                }
            }
            if (!accepted) {
                if (!history.empty()) {
                    history.clear();
                    gamma = 1.0;
                    continue;
                }
                out.message = "line search failed";
                converged = current.loss <= out.loss_trace.front() * opt.rel_tol;
                break;
            }
            p += step * d.head(m);
            v += step * d.tail(m);
            const double decrease = (current.loss - trial.loss) / current.loss;
            current = std::move(trial);
            out.loss_trace.push_back(current.loss);
            ++iterations;
            if (decrease < opt.rel_tol) {
                converged = true;
                out.message = "relative loss decrease below tolerance";
                break;
            }
            if (current.loss <= floor) continue;

            Eigen::VectorXd g_new(2 * m);
            {
                const auto [gp, gv] = gradient(p, v, current);
                g_new << gp, gv;
            }
            const Eigen::VectorXd s_k = step * d;
            Eigen::VectorXd y_k = g_new - g;
            g = std::move(g_new);
            const double sy = s_k.dot(y_k);
            if (opt.history > 0 && sy > 1e-12 * s_k.norm() * y_k.norm()) {
                gamma = sy / y_k.dot(precondition(y_k));
                history.emplace_back(s_k, std::move(y_k));
                if (static_cast<int>(history.size()) > opt.history) history.pop_front();
            }
        }
        if (!converged && out.message.empty()) out.message = "iteration limit reached";
        out.iterations = iterations;
        out.converged = converged;
        finish(p, v, current.loss, out);
    }

    std::pair<Eigen::VectorXd, Eigen::VectorXd> gradient(const Eigen::VectorXd& p, const Eigen::VectorXd& v,
                                                         const Evaluation& at) const {
        const std::size_t n = x.size();
        std::vector<Eigen::VectorXd> gp(n), gv(n);
        for_each_sample(opt.execution, n, [&](std::size_t i) {
            if (x[i] == 0.0) {
                // Exp(p, 0) = p for every p
                gp[i] = at.seeds[i];
                gv[i] = Eigen::VectorXd::Zero(p.size());
                return;
            }
            GeodesicSolver::Trajectory fresh;
            const GeodesicSolver::Trajectory* rec = i < at.records.size() ? &at.records[i] : nullptr;
            if (!rec || rec->positions.empty()) {
                solver.shoot(p, x[i] * v, &fresh);
                rec = &fresh;
            }
            auto [a, b] = solver.pullback(*rec, at.seeds[i]);
            gp[i] = std::move(a);
            gv[i] = x[i] * b;
        });
        Eigen::VectorXd sp = Eigen::VectorXd::Zero(p.size()), sv = Eigen::VectorXd::Zero(p.size());
        for (std::size_t i = 0; i < n; ++i) {
            sp += gp[i];
            sv += gv[i];
        }
        return {sp, sv};
    }

    void finish(const Eigen::VectorXd& p, const Eigen::VectorXd& v, double loss, FitResult& out) const {
        const TopologyPtr& topo = data.y.front().topology();
        out.intercept = TriangleMesh(topo, p);
        out.slope = TangentField(topo, v);
        out.loss = loss;
    }
};

FitResult fit_nonlinear(Method method, const RegressionData& data, const MetricCoefficients& c,
                        const SolverConfig& cfg, const OptimizerConfig& opt) {
    const auto start = Clock::now();
    opt.validate();
    c.validate();
    const FitResult linear = fit_linear(data);
    const NormalizedTimes times = normalize_times(data.x);
    const std::vector<double>& x = times.values;
    const std::size_t n = x.size();

    auto stats = std::make_shared<SolverStats>();
    const GeodesicSolver solver(data.y.front().topology(), c, cfg, mesh_diameter(data.y.front()), stats);

    FitResult out;
    out.method = method;
    out.normalization = times.map;

    const auto predict_all = [&](const Eigen::VectorXd& p, const Eigen::VectorXd& v,
                                 std::vector<Eigen::VectorXd>& yhat,
                                 std::vector<GeodesicSolver::Trajectory>& records) -> bool {
        yhat.assign(n, Eigen::VectorXd());
        records.assign(n, GeodesicSolver::Trajectory{});
        try {
            for_each_sample(opt.execution, n, [&](std::size_t i) {
                yhat[i] = x[i] == 0.0 ? p : solver.shoot(p, x[i] * v, &records[i]);
            });
        } catch (const DegenerateMeshError&) {
            return false;
        } catch (const NonFiniteError&) {
            return false;
        } catch (const SolverError&) {
            return false;
        }
        return true;
    };

    const auto grlr_loss = [&](const Eigen::VectorXd& p, const Eigen::VectorXd& v, Evaluation& e,
                               std::string& why) {
        std::vector<Eigen::VectorXd> yhat;
        if (!predict_all(p, v, yhat, e.records)) {
            why = "degenerate prediction";
            return EvalStatus::invalid;
        }
        e.seeds.resize(n);
        e.loss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            e.seeds[i] = yhat[i] - data.y[i].coords();
            e.loss += 0.5 * e.seeds[i].squaredNorm();
        }
        return EvalStatus::ok;
    };

    const auto gr_loss = [&](const Eigen::VectorXd& p, const Eigen::VectorXd& v, Evaluation& e, std::string& why) {
        std::vector<Eigen::VectorXd> yhat;
        if (!predict_all(p, v, yhat, e.records)) {
            why = "degenerate prediction";
            return EvalStatus::invalid;
        }
        std::vector<double> losses(n, 0.0);
        std::vector<int> failed(n, 0);
        e.seeds.assign(n, Eigen::VectorXd());
        try {
            for_each_sample(opt.execution, n, [&](std::size_t i) {
                const LogResult log = solver.log(yhat[i], data.y[i].coords());
                if (!log.converged) {
                    failed[i] = 1;
                    return;
                }
                // gradient of d^2/2 in the first argument is -G(yhat) Log(yhat, y)
                const Eigen::VectorXd gu = solver.metric_apply(yhat[i], log.velocity.values());
                losses[i] = 0.5 * log.velocity.values().dot(gu);
                e.seeds[i] = -gu;
            });
        } catch (const Error& err) {
            why = err.what();
            return EvalStatus::invalid;
        }
        for (std::size_t i = 0; i < n; ++i)
            if (failed[i]) {
                why = "Log did not converge for sample " + std::to_string(i);
                return EvalStatus::log_failed;
            }
        e.loss = 0.0;
        for (double l : losses) e.loss += l;
        return EvalStatus::ok;
    };

    const Descent descent{data, x, solver, opt, method == Method::GR};
    if (method == Method::GR)
        descent.run(linear.intercept.coords(), linear.slope.values(), gr_loss, out);
    else
        descent.run(linear.intercept.coords(), linear.slope.values(), grlr_loss, out);

    out.exp_calls = stats->exp_calls;
    out.log_calls = stats->log_calls;
    out.assembly_seconds = static_cast<double>(stats->assembly_ns.load()) * 1e-9;
    out.wall_seconds = seconds_since(start);
    return out;
}

} // namespace

FitResult fit_linear(const RegressionData& data) {
    const auto start = Clock::now();
    data.validate();
    const NormalizedTimes times = normalize_times(data.x);
    const std::size_t n = times.values.size();
    const auto dim = data.y.front().coords().size();

    double xbar = 0.0;
    for (double t : times.values) xbar += t;
    xbar /= static_cast<double>(n);
    Eigen::VectorXd ybar = Eigen::VectorXd::Zero(dim);
    for (const auto& mesh : data.y) ybar += mesh.coords();
    ybar /= static_cast<double>(n);

    double sxx = 0.0;
    Eigen::VectorXd sxy = Eigen::VectorXd::Zero(dim);
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = times.values[i] - xbar;
        sxx += dx * dx;
        sxy += dx * (data.y[i].coords() - ybar);
    }
    const Eigen::VectorXd beta = sxy / sxx;
    const Eigen::VectorXd alpha = ybar - xbar * beta;

    FitResult out;
    out.method = Method::LR;
    out.normalization = times.map;
    const TopologyPtr& topo = data.y.front().topology();
    out.intercept = TriangleMesh(topo, alpha);
    out.slope = TangentField(topo, beta);
    for (std::size_t i = 0; i < n; ++i)
        out.loss += 0.5 * (data.y[i].coords() - alpha - times.values[i] * beta).squaredNorm();
    out.loss_trace = {out.loss};
    out.converged = true;
    out.message = "closed form";
    out.wall_seconds = seconds_since(start);
    return out;
}

FitResult fit_geodesic(const RegressionData& data, const MetricCoefficients& c, const SolverConfig& cfg,
                       const OptimizerConfig& opt) {
    return fit_nonlinear(Method::GR, data, c, cfg, opt);
}

FitResult fit_grlr(const RegressionData& data, const MetricCoefficients& c, const SolverConfig& cfg,
                   const OptimizerConfig& opt) {
    return fit_nonlinear(Method::GRLR, data, c, cfg, opt);
}

FitResult fit(Method method, const RegressionData& data, const MetricCoefficients& c, const SolverConfig& cfg,
              const OptimizerConfig& opt) {
    switch (method) {
    case Method::LR:
        return fit_linear(data);
    case Method::GR:
        return fit_geodesic(data, c, cfg, opt);
    case Method::GRLR:
        return fit_grlr(data, c, cfg, opt);
    }
    throw InputError("unknown method");
}

Prediction predict(const FitResult& fit, double x_raw, const MetricCoefficients& c, const SolverConfig& cfg) {
    require_field_on(fit.intercept, fit.slope);
    Prediction out;
    out.x_normalized = fit.normalization.apply(x_raw);
    out.extrapolated = out.x_normalized < 0.0 || out.x_normalized > 1.0;
    const Eigen::VectorXd v = out.x_normalized * fit.slope.values();
    if (fit.method == Method::LR) {
        out.mesh = fit.intercept.with_coords(fit.intercept.coords() + v);
    } else {
        const GeodesicSolver solver(fit.intercept.topology(), c, cfg, mesh_diameter(fit.intercept));
        out.mesh = fit.intercept.with_coords(solver.shoot(fit.intercept.coords(), v));
    }
    return out;
}

Diagnostics diagnostics(const FitResult& fit, const RegressionData& data, const MetricCoefficients& c,
                        const SolverConfig& cfg) {
    data.validate();
    const std::size_t n = data.y.size();
    Diagnostics out;
    out.loss_trace = fit.loss_trace;
    out.exp_calls = fit.exp_calls;
    out.log_calls = fit.log_calls;
    out.assembly_seconds = fit.assembly_seconds;
    out.wall_seconds = fit.wall_seconds;

    std::vector<Eigen::VectorXd> predicted(n);
    for (std::size_t i = 0; i < n; ++i) predicted[i] = predict(fit, data.x[i], c, cfg).mesh.coords();

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(data.y.front().coords().size());
    for (const auto& mesh : data.y) mean += mesh.coords();
    mean /= static_cast<double>(n);
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ss_res += (data.y[i].coords() - predicted[i]).squaredNorm();
        ss_tot += (data.y[i].coords() - mean).squaredNorm();
    }
    out.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);

    out.residual_norms.resize(n);
    out.residual_converged.assign(n, true);
    if (fit.method == Method::GR) {
        const GeodesicSolver solver(data.y.front().topology(), c, cfg, mesh_diameter(data.y.front()));
        for (std::size_t i = 0; i < n; ++i) {
            const LogResult log = solver.log(predicted[i], data.y[i].coords());
            const Eigen::VectorXd& u = log.velocity.values();
            out.residual_norms[i] = std::sqrt(std::max(0.0, u.dot(solver.metric_apply(predicted[i], u))));
            out.residual_converged[i] = log.converged;
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) out.residual_norms[i] = (data.y[i].coords() - predicted[i]).norm();
    }
    return out;
}

} // namespace shapereg
