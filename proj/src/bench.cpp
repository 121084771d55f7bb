#include "shapereg/bench.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

namespace shapereg {

GeodesicPath line_sequence(const TriangleMesh& q_start, const TriangleMesh& q_end, std::size_t T) {
    require_same_topology(*q_start.topology(), *q_end.topology());
    GeodesicPath path;
    path.times = GeodesicPath::uniform_times(T);
    path.meshes.reserve(T);
    const Eigen::VectorXd& a = q_start.coords();
    const Eigen::VectorXd& b = q_end.coords();
    for (double t : path.times) {
        if (t == 0.0)
            path.meshes.push_back(q_start);
        else if (t == 1.0)
            path.meshes.push_back(q_start.with_coords(b));
        else
            path.meshes.push_back(q_start.with_coords(a + t * (b - a)));
    }
    return path;
}

double rmsd(const GeodesicPath& a, const GeodesicPath& b, double D) {
    if (!(D > 0.0)) throw InputError("rmsd needs a positive diameter");
    if (a.size() != b.size() || a.size() == 0) throw SizeMismatchError("paths have different lengths");
    if (a.times != b.times) throw SizeMismatchError("paths are sampled on different time grids");
    const std::size_t n = a.meshes.front().num_vertices();
    double sum = 0.0;
    for (std::size_t t = 0; t < a.size(); ++t) {
        if (a.meshes[t].num_vertices() != n || b.meshes[t].num_vertices() != n)
            throw SizeMismatchError("paths have different vertex counts");
        sum += (a.meshes[t].coords() - b.meshes[t].coords()).squaredNorm();
    }
    return std::sqrt(sum / static_cast<double>(a.size() * n)) / D;
}

void TrialSpec::validate() const {
    if (level < 0 || level > 7) throw InputError("subdivision level must lie in [0, 7]");
    if (!(deformation >= 0.0 && deformation <= 1.0)) throw InputError("deformation must lie in [0, 1]");
    if (T < 2) throw InputError("T must be >= 2");
    if (n_steps < 1) throw InputError("n_steps must be >= 1");
}

TrialRecord run_trial(const TrialSpec& spec, const MetricCoefficients& c, const SolverConfig& cfg) {
    using Clock = std::chrono::steady_clock;
    spec.validate();
    SolverConfig local = cfg;
    local.n_steps = spec.n_steps;

    const TriangleMesh q_start = ellipsoid_mesh(spec.level);
    const TriangleMesh q_end = deform_gaussian(q_start, spec.deformation, spec.seed);
    const double D = mesh_diameter(q_start);
    const auto T = static_cast<std::size_t>(spec.T);

    TrialRecord rec;
    rec.spec = spec;
    rec.n_vertices = q_start.num_vertices();
    rec.diameter = D;

    const auto line_start = Clock::now();
    const GeodesicPath line = line_sequence(q_start, q_end, T);
    rec.t_line_s = std::chrono::duration<double>(Clock::now() - line_start).count();

    const auto geo_start = Clock::now();
    const GeodesicSolver solver(q_start.topology(), c, local, D);
    GeodesicPath geodesic;
    try {
        const LogResult log = solver.log(q_start.coords(), q_end.coords());
        rec.log_converged = log.converged;
        rec.log_iterations = log.iterations;
        rec.log_residual = log.reference > 0.0 ? log.objective / log.reference : 0.0;
        geodesic.times = GeodesicPath::uniform_times(T);
        for (auto& x : solver.shoot_samples(q_start.coords(), log.velocity.values(), geodesic.times))
            geodesic.meshes.push_back(q_start.with_coords(std::move(x)));
    } catch (const Error&) {
        rec.log_converged = false;
        geodesic.meshes.clear();
    }
    rec.t_geodesic_s = std::chrono::duration<double>(Clock::now() - geo_start).count();

    rec.rmsd = geodesic.meshes.empty() ? std::numeric_limits<double>::quiet_NaN() : rmsd(line, geodesic, D);
    // The line costs microseconds; keep the ratio finite on coarse clocks.
    rec.speed_ratio = rec.t_geodesic_s / std::max(rec.t_line_s, 1e-9);
    return rec;
}

void GridConfig::validate() const {
    if (levels.empty() || deformations.empty() || T.empty() || n_steps.empty())
        throw InputError("every grid axis needs at least one value");
    if (seeds < 1) throw InputError("seeds must be >= 1");
}

std::uint64_t trial_seed(std::uint64_t base_seed, std::uint64_t index) {
    // splitmix64 step over the pair
    std::uint64_t z = base_seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::vector<TrialSpec> expand_grid(const GridConfig& grid) {
    grid.validate();
    std::vector<TrialSpec> specs;
    for (int level : grid.levels)
        for (double deformation : grid.deformations)
            for (int T : grid.T)
                for (int n_steps : grid.n_steps)
                    for (int s = 0; s < grid.seeds; ++s) {
                        TrialSpec spec{level, deformation, T, n_steps,
                                       trial_seed(grid.base_seed, static_cast<std::uint64_t>(s))};
                        spec.validate();
                        specs.push_back(spec);
                    }
    return specs;
}

std::vector<TrialRecord> run_grid(const std::vector<TrialSpec>& specs, const MetricCoefficients& c,
                                  const SolverConfig& cfg, int workers) {
    std::vector<TrialRecord> records(specs.size());
    const auto count = static_cast<std::int64_t>(specs.size());
    if (workers <= 1) {
        for (std::int64_t i = 0; i < count; ++i) records[static_cast<std::size_t>(i)] = run_trial(specs[static_cast<std::size_t>(i)], c, cfg);
        return records;
    }
    std::vector<std::exception_ptr> errors(specs.size());
#pragma omp parallel for num_threads(workers) schedule(dynamic, 1)
    for (std::int64_t i = 0; i < count; ++i) {
        const auto k = static_cast<std::size_t>(i);
        try {
            records[k] = run_trial(specs[k], c, cfg);
        } catch (...) {
            errors[k] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    return records;
}

namespace {

// Shortest text that parses back to the same double.
std::string shortest(double value) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

} // namespace

void write_csv(std::ostream& os, const std::vector<TrialRecord>& records) {
    os << kCsvHeader << '\n';
    for (const auto& r : records) {
        os << r.n_vertices << ',' << shortest(r.spec.deformation) << ',' << r.spec.T << ',' << r.spec.n_steps << ','
           << r.spec.seed << ',' << shortest(r.rmsd) << ',' << shortest(r.t_line_s) << ','
           << shortest(r.t_geodesic_s) << ',' << shortest(r.speed_ratio) << ','
           << (r.log_converged ? "true" : "false") << '\n';
    }
}

std::vector<TrialRecord> read_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kCsvHeader) throw InputError("unexpected bench CSV header");
    std::vector<TrialRecord> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 10) throw InputError("bench CSV row has " + std::to_string(cells.size()) + " cells");
        try {
            TrialRecord r;
            r.n_vertices = std::stoull(cells[0]);
            r.spec.deformation = std::stod(cells[1]);
            r.spec.T = std::stoi(cells[2]);
            r.spec.n_steps = std::stoi(cells[3]);
            r.spec.seed = std::stoull(cells[4]);
            r.rmsd = std::stod(cells[5]);
            r.t_line_s = std::stod(cells[6]);
            r.t_geodesic_s = std::stod(cells[7]);
            r.speed_ratio = std::stod(cells[8]);
            if (cells[9] != "true" && cells[9] != "false") throw InputError("bad log_converged value");
            r.log_converged = cells[9] == "true";
            out.push_back(r);
        } catch (const std::logic_error&) {
            throw InputError("malformed bench CSV row: " + line);
        }
    }
    return out;
}

double median(std::vector<double> values) {
    if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(values.begin(), values.end());
    const std::size_t m = values.size() / 2;
    return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

ThresholdCheck check_rmsd_threshold(const std::vector<TrialRecord>& records, double lo, double hi, double limit) {
    using Cell = std::tuple<std::size_t, double, int, int>;
    std::map<Cell, std::vector<double>> cells;
    ThresholdCheck out;
    for (const auto& r : records) {
        if (r.spec.deformation < lo || r.spec.deformation > hi) continue;
        const Cell key{r.n_vertices, r.spec.deformation, r.spec.T, r.spec.n_steps};
        auto& bucket = cells[key];
        if (!r.log_converged || !std::isfinite(r.rmsd)) {
            ++out.excluded;
            continue;
        }
        ++out.rows;
        bucket.push_back(r.rmsd);
    }
    std::ostringstream detail;
    std::size_t evaluated = 0;
    for (const auto& [key, values] : cells) {
        const auto& [n, deformation, T, n_steps] = key;
        detail << "N=" << n << " deformation=" << deformation << " T=" << T << " n_steps=" << n_steps << ": ";
        if (values.empty()) {
            detail << "no converged rows\n";
            continue;
        }
        ++evaluated;
        const double m = median(values);
        out.worst_median = std::max(out.worst_median, m);
        const bool ok = m < limit;
        out.passed = out.passed && ok;
        detail << "median rmsd " << m << (ok ? " < " : " >= ") << limit << " over " << values.size() << " rows\n";
    }
    if (evaluated == 0) {
        out.passed = false;
        detail << "no converged rows with deformation in [" << lo << ", " << hi << "]\n";
    }
    out.detail = detail.str();
    return out;
}

Decision decide_method(double noise_frac, double spread_frac, const DecisionThresholds& thresholds) {
    if (!(noise_frac >= 0.0) || !(spread_frac >= 0.0)) throw InputError("noise and spread must be nonnegative");
    char buf[256];
    Decision d;
    if (thresholds.tolerate_path_error && spread_frac <= thresholds.spread) {
        std::snprintf(buf, sizeof buf,
                      "spread %.4g <= %.4g of the diameter: straight lines stay within 10%% of the geodesic path",
                      spread_frac, thresholds.spread);
        d.method = Method::LR;
    } else if (noise_frac <= thresholds.noise) {
        std::snprintf(buf, sizeof buf,
                      "noise %.4g <= %.4g of the diameter: linear residuals deviate from geodesic ones by less "
                      "than 0.05%% of the diameter",
                      noise_frac, thresholds.noise);
        d.method = Method::GRLR;
    } else {
        std::snprintf(buf, sizeof buf, "noise %.4g > %.4g and spread %.4g %s: full geodesic regression",
                      noise_frac, thresholds.noise, spread_frac,
                      thresholds.tolerate_path_error ? "above the linear-path limit" : "with path error not tolerated");
        d.method = Method::GR;
    }
    d.rule = buf;
    return d;
}

} // namespace shapereg
