#include "shapereg/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <thread>

#ifndef SHAPEREG_VERSION
#define SHAPEREG_VERSION "unknown"
#endif

namespace shapereg {

const std::vector<CoefficientProfile>& coefficient_profiles() {
    static const std::vector<CoefficientProfile> profiles{
        {MetricCoefficients::kDefaultProfile, MetricCoefficients{},
         "deformation terms weighted above parameterization drift"},
        {"balanced", MetricCoefficients{1.0, 1.0, 1.0, 1.0, 0.1, 0.1}, "equal first-order weights, light bending"},
        {"soft", MetricCoefficients{1.0, 0.1, 0.1, 0.1, 0.01, 0.01}, "close to the flat L2 metric"},
    };
    return profiles;
}

const CoefficientProfile& find_profile(const std::string& name) {
    for (const auto& p : coefficient_profiles())
        if (p.name == name) return p;
    std::string known;
    for (const auto& p : coefficient_profiles()) known += (known.empty() ? "" : ", ") + p.name;
    throw InputError("unknown coefficient profile '" + name + "' (known: " + known + ")");
}

void RunConfig::validate() const {
    metric.validate();
    solver.validate();
    optimizer.validate();
    grid.validate();
    if (!(thresholds.spread >= 0.0) || !(thresholds.noise >= 0.0))
        throw InputError("decision thresholds must be nonnegative");
    if (workers < 0) throw InputError("workers must be >= 0");
}

void to_json(Json& j, const MetricCoefficients& c) {
    j = Json{{"a0", c.a0}, {"a1", c.a1}, {"b1", c.b1}, {"c1", c.c1}, {"d1", c.d1}, {"a2", c.a2}};
}

void to_json(Json& j, const SolverConfig& s) {
    j = Json{{"n_steps", s.n_steps},
             {"log_tol", s.log_tol},
             {"log_max_iter", s.log_max_iter},
             {"log_history", s.log_history},
             {"fd_step", s.fd_step},
             {"derivatives", s.derivatives == DerivativeBackend::automatic ? "automatic" : "finite_difference"},
             {"execution", s.execution == Execution::parallel ? "parallel" : "serial"}};
}

void to_json(Json& j, const OptimizerConfig& o) {
    j = Json{{"max_iter", o.max_iter},
             {"rel_tol", o.rel_tol},
             {"armijo", o.armijo},
             {"shrink", o.shrink},
             {"max_backtracks", o.max_backtracks},
             {"history", o.history},
             {"execution", o.execution == Execution::parallel ? "parallel" : "serial"}};
}

void to_json(Json& j, const GridConfig& g) {
    j = Json{{"levels", g.levels}, {"deformations", g.deformations}, {"T", g.T}, {"n_steps", g.n_steps},
             {"seeds", g.seeds}};
}

void to_json(Json& j, const DecisionThresholds& t) {
    j = Json{{"spread", t.spread}, {"noise", t.noise}, {"tolerate_path_error", t.tolerate_path_error}};
}

void to_json(Json& j, const RunConfig& r) {
    j = Json{{"profile", r.profile},     {"metric", r.metric},         {"solver", r.solver},
             {"optimizer", r.optimizer}, {"grid", r.grid},             {"thresholds", r.thresholds},
             {"seed", r.seed},           {"workers", r.workers},       {"out_dir", r.out_dir}};
}

namespace {

// Strict reader for one JSON object section.
class Section {
public:
    Section(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw InputError(where_ + " must be a JSON object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        const auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!it->is_number()) throw InputError("");
            } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
                if (!it->is_number_integer()) throw InputError("");
                if constexpr (std::is_unsigned_v<T>)
                    if (it->is_number_integer() && !it->is_number_unsigned()) throw InputError("");
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!it->is_boolean()) throw InputError("");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!it->is_string()) throw InputError("");
            }
            out = it->template get<T>();
        } catch (const std::exception&) {
            throw InputError(where_ + "." + key + " has the wrong type");
        }
    }

    const Json* child(const char* key) {
        seen_.insert(key);
        const auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void finish() const {
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key)) throw InputError("unknown key " + where_ + "." + key);
    }

private:
    const Json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

Execution parse_execution(const std::string& s, const std::string& where) {
    if (s == "parallel") return Execution::parallel;
    if (s == "serial") return Execution::serial;
    throw InputError(where + " must be \"serial\" or \"parallel\"");
}

} // namespace

RunConfig run_config_from_json(const Json& j) {
    RunConfig r;
    Section top(j, "config");
    top.get("profile", r.profile);
    const CoefficientProfile* base = r.profile == "custom" ? nullptr : &find_profile(r.profile);
    if (base) r.metric = base->coeffs;
    if (const Json* m = top.child("metric")) {
        Section s(*m, "metric");
        s.get("a0", r.metric.a0);
        s.get("a1", r.metric.a1);
        s.get("b1", r.metric.b1);
        s.get("c1", r.metric.c1);
        s.get("d1", r.metric.d1);
        s.get("a2", r.metric.a2);
        s.finish();
        if (base && !(r.metric == base->coeffs)) r.profile = "custom";
    }
    if (const Json* m = top.child("solver")) {
        Section s(*m, "solver");
        s.get("n_steps", r.solver.n_steps);
        s.get("log_tol", r.solver.log_tol);
        s.get("log_max_iter", r.solver.log_max_iter);
        s.get("log_history", r.solver.log_history);
        s.get("fd_step", r.solver.fd_step);
        std::string derivatives = "automatic", execution = "parallel";
        s.get("derivatives", derivatives);
        s.get("execution", execution);
        if (derivatives == "automatic")
            r.solver.derivatives = DerivativeBackend::automatic;
        else if (derivatives == "finite_difference")
            r.solver.derivatives = DerivativeBackend::finite_difference;
        else
            throw InputError("solver.derivatives must be \"automatic\" or \"finite_difference\"");
        r.solver.execution = parse_execution(execution, "solver.execution");
        s.finish();
    }
    if (const Json* m = top.child("optimizer")) {
        Section s(*m, "optimizer");
        s.get("max_iter", r.optimizer.max_iter);
        s.get("rel_tol", r.optimizer.rel_tol);
        s.get("armijo", r.optimizer.armijo);
        s.get("shrink", r.optimizer.shrink);
        s.get("max_backtracks", r.optimizer.max_backtracks);
        s.get("history", r.optimizer.history);
        std::string execution = "parallel";
        s.get("execution", execution);
        r.optimizer.execution = parse_execution(execution, "optimizer.execution");
        s.finish();
    }
    if (const Json* m = top.child("grid")) {
        Section s(*m, "grid");
        s.get("levels", r.grid.levels);
        s.get("deformations", r.grid.deformations);
        s.get("T", r.grid.T);
        s.get("n_steps", r.grid.n_steps);
        s.get("seeds", r.grid.seeds);
        s.finish();
    }
    if (const Json* m = top.child("thresholds")) {
        Section s(*m, "thresholds");
        s.get("spread", r.thresholds.spread);
        s.get("noise", r.thresholds.noise);
        s.get("tolerate_path_error", r.thresholds.tolerate_path_error);
        s.finish();
    }
    top.get("seed", r.seed);
    top.get("workers", r.workers);
    top.get("out_dir", r.out_dir);
    top.finish();
    r.grid.base_seed = r.seed;
    r.validate();
    return r;
}

Json read_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot read " + path.string());
    try {
        return Json::parse(is);
    } catch (const Json::exception& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

void write_json(const std::filesystem::path& path, const Json& j) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot write " + path.string());
    os << j.dump(2) << '\n';
    if (!os) throw InputError("failed writing " + path.string());
}

RunConfig load_run_config(const std::filesystem::path& path) {
    const Json j = read_json(path);
    try {
        if (j.is_object() && j.contains("config") && j.contains("command")) return run_config_from_json(j.at("config"));
        return run_config_from_json(j);
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

std::string config_hash(const Json& j) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : j.dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Json fit_result_json(const FitResult& fit) {
    return Json{{"method", to_string(fit.method)},
                {"loss", fit.loss},
                {"iterations", fit.iterations},
                {"wall_seconds", fit.wall_seconds},
                {"converged", fit.converged},
                {"x_shift", fit.normalization.shift},
                {"x_scale", fit.normalization.scale},
                {"message", fit.message},
                {"loss_trace", fit.loss_trace},
                {"exp_calls", fit.exp_calls},
                {"log_calls", fit.log_calls},
                {"assembly_seconds", fit.assembly_seconds}};
}

Json diagnostics_json(const Diagnostics& d) {
    std::vector<bool> converged(d.residual_converged.begin(), d.residual_converged.end());
    return Json{{"residual_norms", d.residual_norms},
                {"residual_converged", converged},
                {"r_squared", d.r_squared},
                {"loss_trace", d.loss_trace},
                {"exp_calls", d.exp_calls},
                {"log_calls", d.log_calls},
                {"assembly_seconds", d.assembly_seconds},
                {"wall_seconds", d.wall_seconds}};
}

std::string build_version() { return SHAPEREG_VERSION; }

std::string hardware_note() {
    std::string model = "unknown cpu";
    std::ifstream cpu("/proc/cpuinfo");
    std::string line;
    while (std::getline(cpu, line)) {
        if (line.rfind("model name", 0) == 0) {
            const auto colon = line.find(':');
            if (colon != std::string::npos) model = line.substr(colon + 2);
            break;
        }
    }
    return model + ", " + std::to_string(std::thread::hardware_concurrency()) + " hardware threads, " +
           std::to_string(max_workers()) + " OpenMP threads";
}

} // namespace shapereg
