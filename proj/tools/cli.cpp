#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"

#include "shapereg/bench.hpp"
#include "shapereg/config.hpp"
#include "shapereg/geodesic.hpp"
#include "shapereg/io.hpp"
#include "shapereg/metric.hpp"
#include "shapereg/regression.hpp"

namespace shapereg::cli {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

struct GlobalOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::optional<std::string> out_dir;
    std::optional<std::string> profile;
};

struct Context {
    RunConfig config;
    int workers = 1;
    fs::path out_dir;
    std::vector<std::string> argv;

    fs::path output(const std::string& name) const {
        const fs::path p(name);
        return p.is_absolute() ? p : out_dir / p;
    }
};

int workers_from_env() {
    const char* env = std::getenv("SHAPE_REGRESS_WORKERS");
    if (!env || !*env) return 0;
    char* end = nullptr;
    const long value = std::strtol(env, &end, 10);
    if (*end != '\0' || value < 1 || value > 4096)
        throw InputError(std::string("SHAPE_REGRESS_WORKERS must be a positive integer, got '") + env + "'");
    return static_cast<int>(value);
}

Context make_context(const GlobalOptions& g, const std::vector<std::string>& args) {
    Context ctx;
    if (!g.config.empty()) ctx.config = load_run_config(g.config);
    if (g.profile) {
        ctx.config.profile = *g.profile;
        ctx.config.metric = find_profile(*g.profile).coeffs;
    }
    if (g.seed) ctx.config.seed = *g.seed;
    ctx.config.grid.base_seed = ctx.config.seed;
    if (g.out_dir) ctx.config.out_dir = *g.out_dir;

    int workers = g.workers.value_or(0);
    if (workers == 0) workers = workers_from_env();
    if (workers == 0) workers = ctx.config.workers;
    if (workers == 0) workers = max_workers();
    if (workers < 1) throw InputError("--workers must be >= 1");
    ctx.config.workers = workers;
    ctx.workers = workers;
    set_workers(workers);

    ctx.config.validate();
    ctx.out_dir = ctx.config.out_dir;
    fs::create_directories(ctx.out_dir);
    ctx.argv = args;
    return ctx;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

Json mesh_entry(const fs::path& path, const TriangleMesh& mesh) {
    return Json{{"path", path.string()},
                {"n_vertices", mesh.num_vertices()},
                {"n_faces", mesh.num_faces()},
                {"fingerprint", hex64(mesh_fingerprint(mesh))}};
}

Json manifest(const Context& ctx, const std::string& command, Json parameters) {
    Json config = ctx.config;
    return Json{{"command", command},
                {"argv", ctx.argv},
                {"parameters", std::move(parameters)},
                {"config", config},
                {"config_hash", config_hash(config)},
                {"seed", ctx.config.seed},
                {"version", build_version()},
                {"hardware", hardware_note()}};
}

fs::path sibling_manifest(const fs::path& file) {
    fs::path m = file;
    m.replace_extension(".manifest.json");
    return m;
}

Eigen::Vector3d parse_axes(const std::string& text) {
    std::vector<double> values;
    std::stringstream ss(text);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            std::size_t used = 0;
            values.push_back(std::stod(cell, &used));
            if (used != cell.size()) throw std::invalid_argument(cell);
        } catch (const std::logic_error&) {
            throw InputError("--axes expects three comma-separated numbers, got '" + text + "'");
        }
    }
    if (values.size() != 3) throw InputError("--axes expects three comma-separated numbers, got '" + text + "'");
    for (double a : values)
        if (!(a > 0.0) || !std::isfinite(a)) throw InputError("--axes must be positive and finite");
    return {values[0], values[1], values[2]};
}

// ---------------------------------------------------------------- synth

struct SynthOptions {
    int level = 2;
    std::string axes = "2,2,3";
    std::string out;
};

int cmd_synth(const Context& ctx, const SynthOptions& o, std::ostream& out) {
    if (o.level < 0 || o.level > 7) throw InputError("--level must lie in [0, 7]");
    const Eigen::Vector3d axes = parse_axes(o.axes);
    const TriangleMesh mesh = ellipsoid_mesh(o.level, axes);
    const double D = mesh_diameter(mesh);
    const fs::path path = ctx.output(o.out.empty() ? "ellipsoid_L" + std::to_string(o.level) + ".ply" : o.out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_ply(path, mesh, "ellipsoid level " + std::to_string(o.level) + " axes " + o.axes);

    Json m = manifest(ctx, "synth", Json{{"level", o.level}, {"axes", {axes.x(), axes.y(), axes.z()}}});
    m["outputs"] = Json::array({mesh_entry(path, mesh)});
    m["diameter"] = D;
    write_json(sibling_manifest(path), m);

    out << "wrote " << path.string() << '\n'
        << "N=" << mesh.num_vertices() << " F=" << mesh.num_faces() << " diameter=" << std::setprecision(10) << D
        << '\n';
    return kSuccess;
}

// ---------------------------------------------------------------- deform

struct DeformOptions {
    std::string in;
    double deformation = 0.0;
    std::string out;
};

int cmd_deform(const Context& ctx, const DeformOptions& o, std::ostream& out) {
    if (!(o.deformation >= 0.0 && o.deformation <= 1.0)) throw InputError("--deformation must lie in [0, 1]");
    const TriangleMesh base = read_mesh(o.in);
    const double D = mesh_diameter(base);
    const TriangleMesh deformed = deform_gaussian(base, o.deformation, ctx.config.seed);
    const fs::path path = ctx.output(o.out.empty() ? fs::path(o.in).stem().string() + "_deformed.ply" : o.out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ostringstream comment;
    comment << std::setprecision(17) << "gaussian deformation " << o.deformation << " seed " << ctx.config.seed;
    write_ply(path, deformed, comment.str());

    const double sigma = o.deformation * D;
    Json m = manifest(ctx, "deform", Json{{"deformation", o.deformation}});
    m["inputs"] = Json::array({mesh_entry(o.in, base)});
    m["outputs"] = Json::array({mesh_entry(path, deformed)});
    m["diameter"] = D;
    m["sigma"] = sigma;
    write_json(sibling_manifest(path), m);

    out << "wrote " << path.string() << '\n'
        << "diameter=" << std::setprecision(10) << D << " sigma=" << sigma << '\n';
    return kSuccess;
}

// ---------------------------------------------------------------- geodesic

struct GeodesicOptions {
    std::string p;
    std::string q;
    std::string v;
    int samples = 5;
    std::string out = "geodesic";
};

int cmd_geodesic(const Context& ctx, const GeodesicOptions& o, std::ostream& out, std::ostream& err) {
    if (o.samples < 2) throw InputError("--t must be >= 2");
    if (o.q.empty() == o.v.empty()) throw InputError("give exactly one of --q and --v");
    const TriangleMesh p = read_mesh(o.p);
    const double D = mesh_diameter(p);
    const fs::path dir = ctx.output(o.out);
    fs::create_directories(dir);

    const auto start = Clock::now();
    const GeodesicSolver solver(p.topology(), ctx.config.metric, ctx.config.solver, D);
    Json parameters{{"p", o.p}, {"t", o.samples}};
    Json inputs = Json::array({mesh_entry(o.p, p)});
    Json log_info = nullptr;
    Eigen::VectorXd velocity;
    double log_seconds = 0.0;

    if (!o.q.empty()) {
        const TriangleMesh q = read_mesh(o.q, p.topology());
        require_same_topology(*p.topology(), *q.topology());
        parameters["q"] = o.q;
        inputs.push_back(mesh_entry(o.q, q));
        const LogResult log = solver.log(p.coords(), q.coords());
        log_seconds = seconds_since(start);
        log_info = Json{{"converged", log.converged},
                        {"iterations", log.iterations},
                        {"objective", log.objective},
                        {"reference", log.reference},
                        {"seconds", log_seconds}};
        if (!log.converged) {
            Json diag = manifest(ctx, "geodesic", parameters);
            diag["inputs"] = inputs;
            diag["error"] = "log did not converge";
            diag["log"] = log_info;
            write_json(dir / "log_diagnostic.json", diag);
            err << diag.dump(2) << '\n';
            return kSolverFailure;
        }
        velocity = log.velocity.values();
    } else {
        const PlyContents field = read_ply(fs::path(o.v));
        if (!field.field) throw InputError(o.v + " has no dx, dy, dz vertex properties");
        require_same_topology(*p.topology(), *field.mesh.topology());
        parameters["v"] = o.v;
        inputs.push_back(mesh_entry(o.v, field.mesh));
        velocity = field.field->values();
    }

    GeodesicPath path;
    path.times = GeodesicPath::uniform_times(static_cast<std::size_t>(o.samples));
    const auto exp_start = Clock::now();
    for (auto& x : solver.shoot_samples(p.coords(), velocity, path.times))
        path.meshes.push_back(p.with_coords(std::move(x)));
    const double exp_seconds = seconds_since(exp_start);
    const std::vector<double> energy = energy_profile(path, ctx.config.metric);

    const int width = std::max(3, static_cast<int>(std::to_string(o.samples - 1).size()));
    Json outputs = Json::array();
    for (std::size_t j = 0; j < path.size(); ++j) {
        char name[64];
        std::snprintf(name, sizeof name, "path_%0*zu.ply", width, j);
        std::ostringstream comment;
        comment << std::setprecision(17) << "t " << path.times[j];
        write_ply(dir / name, path.meshes[j], comment.str());
        outputs.push_back(mesh_entry(dir / name, path.meshes[j]));
    }
    write_field_ply(dir / "velocity.ply", p, TangentField(p.topology(), velocity), "initial velocity");
    {
        std::ofstream csv(dir / "energy.csv");
        csv << "segment,t_start,t_end,energy\n";
        char buf[128];
        for (std::size_t s = 0; s < energy.size(); ++s) {
            std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", s, path.times[s], path.times[s + 1], energy[s]);
            csv << buf;
        }
        if (!csv) throw InputError("failed writing energy.csv");
    }

    double total = 0.0;
    for (std::size_t s = 0; s < energy.size(); ++s) total += energy[s] * (path.times[s + 1] - path.times[s]);

    Json m = manifest(ctx, "geodesic", parameters);
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    m["times"] = path.times;
    m["energy"] = energy;
    m["path_energy"] = total;
    m["log"] = log_info;
    m["timings"] = Json{{"log_s", log_seconds}, {"exp_s", exp_seconds}, {"total_s", seconds_since(start)}};
    write_json(dir / "manifest.json", m);

    out << "wrote " << path.size() << " meshes to " << dir.string() << '\n'
        << "path energy " << std::setprecision(10) << total << '\n';
    return kSuccess;
}

// ---------------------------------------------------------------- regress

struct RegressOptions {
    std::string x_csv;
    std::string method = "lr";
    std::string out;
};

RegressionData read_regression_csv(const fs::path& csv_path, std::vector<std::string>& files) {
    std::ifstream is(csv_path);
    if (!is) throw InputError("cannot read " + csv_path.string());
    std::string line;
    std::getline(is, line);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "filename,x") throw InputError(csv_path.string() + ": header must be 'filename,x'");
    RegressionData data;
    TopologyPtr shared;
    std::size_t row = 1;
    while (std::getline(is, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.rfind(',');
        if (comma == std::string::npos) throw InputError(csv_path.string() + ": row " + std::to_string(row) + " lacks a comma");
        const std::string name = line.substr(0, comma);
        double x = 0.0;
        try {
            std::size_t used = 0;
            const std::string cell = line.substr(comma + 1);
            x = std::stod(cell, &used);
            if (used != cell.size()) throw std::invalid_argument(cell);
        } catch (const std::logic_error&) {
            throw InputError(csv_path.string() + ": row " + std::to_string(row) + " has a bad x value");
        }
        fs::path mesh_path(name);
        if (mesh_path.is_relative()) mesh_path = csv_path.parent_path() / mesh_path;
        TriangleMesh mesh = read_mesh(mesh_path, shared);
        if (!shared) shared = mesh.topology();
        require_same_topology(*shared, *mesh.topology());
        files.push_back(mesh_path.string());
        data.x.push_back(x);
        data.y.push_back(std::move(mesh));
    }
    data.validate();
    return data;
}

int cmd_regress(const Context& ctx, const RegressOptions& o, std::ostream& out, std::ostream& err) {
    const Method method = parse_method(o.method);
    std::vector<std::string> files;
    const RegressionData data = read_regression_csv(o.x_csv, files);
    const fs::path dir = ctx.output(o.out.empty() ? "regress_" + to_string(method) : o.out);
    fs::create_directories(dir);

    OptimizerConfig opt = ctx.config.optimizer;
    const FitResult result = fit(method, data, ctx.config.metric, ctx.config.solver, opt);
    const Diagnostics diag = diagnostics(result, data, ctx.config.metric, ctx.config.solver);

    write_ply(dir / "intercept.ply", result.intercept, to_string(method) + " intercept");
    write_field_ply(dir / "slope.ply", result.intercept, result.slope, to_string(method) + " slope");
    Json fit_json = fit_result_json(result);
    fit_json["intercept"] = "intercept.ply";
    fit_json["slope"] = "slope.ply";
    write_json(dir / "fit.json", fit_json);
    write_json(dir / "diagnostics.json", diagnostics_json(diag));

    Json inputs = Json::array();
    for (std::size_t i = 0; i < files.size(); ++i) {
        Json e = mesh_entry(files[i], data.y[i]);
        e["x"] = data.x[i];
        inputs.push_back(e);
    }
    Json m = manifest(ctx, "regress", Json{{"x_csv", o.x_csv}, {"method", to_string(method)}});
    m["inputs"] = inputs;
    m["outputs"] = Json::array({"fit.json", "intercept.ply", "slope.ply", "diagnostics.json"});
    write_json(dir / "manifest.json", m);

    out << to_string(method) << " loss " << std::setprecision(10) << result.loss << " after " << result.iterations
        << " iterations (" << result.message << ")\n"
        << "wrote " << dir.string() << '\n';
    if (!result.converged) {
        err << "optimizer did not converge: " << result.message << '\n';
        return kSolverFailure;
    }
    return kSuccess;
}

// ---------------------------------------------------------------- bench

struct BenchOptions {
    std::vector<int> levels;
    std::vector<double> deformations;
    std::vector<int> T;
    std::vector<int> n_steps;
    int seeds = 0;
    bool assert_delta = false;
    bool assert_spread = false;
    std::string csv = "bench.csv";
};

int cmd_bench(const Context& ctx, const BenchOptions& o, std::ostream& out, std::ostream& err) {
    GridConfig grid = ctx.config.grid;
    if (!o.levels.empty()) grid.levels = o.levels;
    if (!o.deformations.empty()) grid.deformations = o.deformations;
    if (!o.T.empty()) grid.T = o.T;
    if (!o.n_steps.empty()) grid.n_steps = o.n_steps;
    if (o.seeds > 0) grid.seeds = o.seeds;
    grid.base_seed = ctx.config.seed;
    const std::vector<TrialSpec> specs = expand_grid(grid);

    const auto start = Clock::now();
    const std::vector<TrialRecord> records = run_grid(specs, ctx.config.metric, ctx.config.solver, ctx.workers);
    const double wall = seconds_since(start);

    const fs::path csv_path = ctx.output(o.csv);
    if (csv_path.has_parent_path()) fs::create_directories(csv_path.parent_path());
    {
        std::ofstream csv(csv_path);
        if (!csv) throw InputError("cannot write " + csv_path.string());
        write_csv(csv, records);
    }

    Json checks = Json::object();
    bool failed = false;
    auto assert_threshold = [&](const char* name, double lo, double hi, double limit) {
        const ThresholdCheck c = check_rmsd_threshold(records, lo, hi, limit);
        checks[name] = Json{{"passed", c.passed},
                            {"rows", c.rows},
                            {"excluded", c.excluded},
                            {"worst_median", c.worst_median},
                            {"limit", limit},
                            {"detail", c.detail}};
        out << name << ": " << (c.passed ? "PASS" : "FAIL") << '\n' << c.detail;
        failed = failed || !c.passed;
    };
    if (o.assert_delta) assert_threshold("delta_test", 0.01 - 1e-12, 0.01 + 1e-12, kDeltaTestLimit);
    if (o.assert_spread) assert_threshold("spread_test", 0.10 - 1e-12, 0.50 + 1e-12, kSpreadTestLimit);

    std::size_t converged = 0;
    for (const auto& r : records) converged += r.log_converged ? 1 : 0;
    Json parameters{{"grid", grid}, {"assert_delta_test", o.assert_delta}, {"assert_spread_test", o.assert_spread}};
    Json m = manifest(ctx, "bench", parameters);
    m["profile"] = ctx.config.profile;
    m["metric"] = ctx.config.metric;
    m["solver"] = ctx.config.solver;
    m["outputs"] = Json::array({csv_path.string()});
    m["rows"] = records.size();
    m["log_converged_rows"] = converged;
    m["checks"] = checks;
    m["timings"] = Json{{"wall_s", wall}, {"workers", ctx.workers}};
    write_json(sibling_manifest(csv_path), m);

    out << "wrote " << records.size() << " rows to " << csv_path.string() << " (" << converged
        << " with converged Log)\n";
    if (failed) {
        err << "threshold assertion failed\n";
        return kAssertionFailure;
    }
    return kSuccess;
}

// ---------------------------------------------------------------- decide

struct DecideOptions {
    double noise = 0.0;
    double spread = 0.0;
    bool strict = false;
};

int cmd_decide(const Context& ctx, const DecideOptions& o, std::ostream& out) {
    DecisionThresholds t = ctx.config.thresholds;
    if (o.strict) t.tolerate_path_error = false;
    const Decision d = decide_method(o.noise, o.spread, t);
    out << to_string(d.method) << '\n'
        << "rule: " << d.rule << '\n'
        << "thresholds: spread <= " << t.spread << " -> LR (path error under 10% of the diameter"
        << (t.tolerate_path_error ? "" : ", disabled") << "); noise <= " << t.noise
        << " -> GRLR (residual error under 0.05% of the diameter); otherwise GR\n";

    Json m = manifest(ctx, "decide", Json{{"noise", o.noise}, {"spread", o.spread}, {"strict", o.strict}});
    m["method"] = to_string(d.method);
    m["rule"] = d.rule;
    m["thresholds"] = t;
    write_json(ctx.output("decide.manifest.json"), m);
    return kSuccess;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Geodesic and linear regression of triangle meshes under a second-order Sobolev metric",
                 "shape-regress"};
    app.require_subcommand(1);
    app.set_version_flag("--version", build_version());

    GlobalOptions g;
    app.add_option("--config", g.config, "run configuration JSON (or a manifest from an earlier run)")
        ->check(CLI::ExistingFile);
    app.add_option("--seed", g.seed, "64-bit seed for every random draw");
    app.add_option("--workers", g.workers, "concurrent trials or residual evaluations (env SHAPE_REGRESS_WORKERS)")
        ->check(CLI::PositiveNumber);
    app.add_option("--out-dir", g.out_dir, "directory for outputs and manifests");
    app.add_option("--profile", g.profile, "named metric coefficient profile");
    app.fallthrough();

    SynthOptions synth;
    auto* s = app.add_subcommand("synth", "write a subdivided ellipsoid");
    s->add_option("--level", synth.level, "subdivision level")->capture_default_str();
    s->add_option("--axes", synth.axes, "semi-axes a,b,c")->capture_default_str();
    s->add_option("--out", synth.out, "output PLY");

    DeformOptions deform;
    auto* d = app.add_subcommand("deform", "add Gaussian vertex noise with sigma = deformation * diameter");
    d->add_option("--in", deform.in, "input mesh (.ply or .off)")->required()->check(CLI::ExistingFile);
    d->add_option("--deformation", deform.deformation, "noise level as a fraction of the diameter")->required();
    d->add_option("--out", deform.out, "output PLY");

    GeodesicOptions geo;
    auto* ge = app.add_subcommand("geodesic", "geodesic between two meshes, or shot from a mesh and a velocity");
    ge->add_option("--p", geo.p, "start mesh")->required()->check(CLI::ExistingFile);
    auto* q_opt = ge->add_option("--q", geo.q, "end mesh")->check(CLI::ExistingFile);
    auto* v_opt = ge->add_option("--v", geo.v, "velocity field PLY (dx, dy, dz)")->check(CLI::ExistingFile);
    q_opt->excludes(v_opt);
    ge->add_option("--t", geo.samples, "number of samples along the path")->capture_default_str();
    ge->add_option("--out", geo.out, "output directory")->capture_default_str();

    RegressOptions reg;
    auto* r = app.add_subcommand("regress", "fit a regression to a mesh sequence");
    r->add_option("--x", reg.x_csv, "CSV with header filename,x")->required()->check(CLI::ExistingFile);
    r->add_option("--method", reg.method, "lr, gr or grlr")->capture_default_str();
    r->add_option("--out", reg.out, "output directory");

    BenchOptions bench;
    auto* b = app.add_subcommand("bench", "line versus geodesic accuracy and speed sweep");
    b->add_option("--levels", bench.levels, "subdivision levels")->delimiter(',');
    b->add_option("--deformations", bench.deformations, "deformation levels")->delimiter(',');
    b->add_option("--T", bench.T, "samples per path")->delimiter(',');
    b->add_option("--n-steps", bench.n_steps, "Euler step counts")->delimiter(',');
    b->add_option("--seeds", bench.seeds, "noise draws per cell");
    b->add_flag("--assert-delta-test", bench.assert_delta, "require median rmsd < 5e-4 at 1% deformation");
    b->add_flag("--assert-spread-test", bench.assert_spread, "require median rmsd < 0.1 at 10-50% deformation");
    b->add_option("--csv", bench.csv, "output CSV")->capture_default_str();

    DecideOptions dec;
    auto* de = app.add_subcommand("decide", "pick LR, GRLR or GR from noise and spread");
    de->add_option("--noise", dec.noise, "noise as a fraction of the diameter")->required();
    de->add_option("--spread", dec.spread, "data spread as a fraction of the diameter")->required();
    de->add_flag("--strict", dec.strict, "do not tolerate the straight-line path error");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kSuccess;
    } catch (const CLI::CallForVersion&) {
        out << build_version() << '\n';
        return kSuccess;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n' << "run with --help for usage\n";
        return kInputError;
    }

    try {
        const Context ctx = make_context(g, args);
        if (s->parsed()) return cmd_synth(ctx, synth, out);
        if (d->parsed()) return cmd_deform(ctx, deform, out);
        if (ge->parsed()) return cmd_geodesic(ctx, geo, out, err);
        if (r->parsed()) return cmd_regress(ctx, reg, out, err);
        if (b->parsed()) return cmd_bench(ctx, bench, out, err);
        if (de->parsed()) return cmd_decide(ctx, dec, out);
    } catch (const InputError& e) {
        err << "input error: " << e.what() << '\n';
        return kInputError;
    } catch (const DegenerateMeshError& e) {
        err << "input error: " << e.what() << '\n';
        return kInputError;
    } catch (const Error& e) {
        err << "solver error: " << e.what() << '\n';
        return kSolverFailure;
    } catch (const fs::filesystem_error& e) {
        err << "input error: " << e.what() << '\n';
        return kInputError;
    }
    return kInputError;
}

} // namespace shapereg::cli
