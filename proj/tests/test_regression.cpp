#include "doctest.h"

#include "shapereg/regression.hpp"
#include "support.hpp"

using namespace shapereg;
using namespace testing;

namespace {

// Noise-free geodesic data y_i = Exp(p, x_i v) with an affine v of the given
// per-vertex RMS, x_i evenly spaced on [0, 1].
struct GeodesicData {
    TriangleMesh p;
    TangentField v;
    RegressionData data;
    double D = 0.0;
};

GeodesicData make_geodesic_data(int level, std::size_t n, double fraction, const SolverConfig& cfg,
                                 std::uint64_t seed = 5) {
    GeodesicData g;
    g.p = ellipsoid_mesh(level);
    g.D = mesh_diameter(g.p);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    Eigen::Matrix3d A;
    for (int i = 0; i < 9; ++i) A(i / 3, i % 3) = nd(rng);
    Eigen::VectorXd v(g.p.coords().size());
    for (std::size_t i = 0; i < g.p.num_vertices(); ++i) v.segment<3>(3 * static_cast<Eigen::Index>(i)) = A * g.p.vertex(i);
    g.v = TangentField(g.p.topology(), with_rms(v, fraction * g.D));
    const GeodesicSolver solver(g.p.topology(), MetricCoefficients{}, cfg, g.D);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(i) / static_cast<double>(n - 1);
        g.data.x.push_back(x);
        g.data.y.push_back(g.p.with_coords(solver.shoot(g.p.coords(), x * g.v.values())));
    }
    return g;
}

RegressionData with_noise(RegressionData data, double fraction, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& y : data.y) {
        const double sigma = fraction * mesh_diameter(y);
        y = y.with_coords(y.coords() + random_vector(y.coords().size(), rng, sigma));
    }
    return data;
}

double rms_per_vertex(const Eigen::VectorXd& d) { return std::sqrt(d.squaredNorm() / static_cast<double>(d.size() / 3)); }

// Least squares by steepest descent with exact line search on the quadratic
// 1/2 sum_i ||a + x_i b - y_i||^2, independent of the normal-equation formula.
std::pair<Eigen::VectorXd, Eigen::VectorXd> descent_least_squares(const std::vector<double>& x,
                                                                  const std::vector<Eigen::VectorXd>& y) {
    const auto dim = y.front().size();
    Eigen::VectorXd a = Eigen::VectorXd::Zero(dim), b = Eigen::VectorXd::Zero(dim);
    auto residuals = [&] {
        std::vector<Eigen::VectorXd> r;
        for (std::size_t i = 0; i < x.size(); ++i) r.push_back(a + x[i] * b - y[i]);
        return r;
    };
    for (int it = 0; it < 100000; ++it) {
        const auto r = residuals();
        Eigen::VectorXd ga = Eigen::VectorXd::Zero(dim), gb = Eigen::VectorXd::Zero(dim);
        for (std::size_t i = 0; i < x.size(); ++i) {
            ga += r[i];
            gb += x[i] * r[i];
        }
        const double gg = ga.squaredNorm() + gb.squaredNorm();
        if (gg < 1e-30) break;
        double curvature = 0.0;
        for (double xi : x) curvature += (ga + xi * gb).squaredNorm();
        const double step = gg / curvature;
        a -= step * ga;
        b -= step * gb;
    }
    return {a, b};
}

} // namespace

TEST_CASE("time normalization") {
    const std::vector<double> a{2, 4};
    auto n = normalize_times(a);
    CHECK(n.values == std::vector<double>{0, 1});
    CHECK(n.map.shift == 2.0);
    CHECK(n.map.scale == 2.0);

    const std::vector<double> b{0, 0.25, 1};
    CHECK(normalize_times(b).values == b);

    const std::vector<double> c{10, 15, 20};
    n = normalize_times(c);
    CHECK(n.values == std::vector<double>{0, 0.5, 1});
    CHECK(n.map.invert(0.5) == 15.0);

    const std::vector<double> flat{3, 3, 3};
    CHECK_THROWS_AS(normalize_times(flat), InputError);
    const std::vector<double> one{3};
    CHECK_THROWS_AS(normalize_times(one), InputError);
}

TEST_CASE("linear regression recovers exactly linear data") {
    const TriangleMesh alpha = ellipsoid_mesh(2);
    std::mt19937_64 rng(1);
    const Eigen::VectorXd beta = random_vector(alpha.coords().size(), rng, 0.1);
    RegressionData data;
    for (double x : {0.0, 0.2, 0.5, 0.7, 1.0}) {
        data.x.push_back(x);
        data.y.push_back(alpha.with_coords(alpha.coords() + x * beta));
    }
    const FitResult fit = fit_linear(data);
    CHECK(fit.method == Method::LR);
    CHECK(fit.iterations == 0);
    CHECK(fit.converged);
    CHECK(fit.loss < 1e-18);
    CHECK((fit.intercept.coords() - alpha.coords()).norm() < 1e-12);
    CHECK((fit.slope.values() - beta).norm() < 1e-12);

    const Prediction at_min = predict(fit, 0.0, MetricCoefficients{}, SolverConfig{});
    CHECK((at_min.mesh.coords() - data.y.front().coords()).norm() < 1e-12);
    CHECK_FALSE(at_min.extrapolated);
    CHECK(predict(fit, 1.5, MetricCoefficients{}, SolverConfig{}).extrapolated);
    CHECK(predict(fit, -0.1, MetricCoefficients{}, SolverConfig{}).extrapolated);

    const Diagnostics d = diagnostics(fit, data, MetricCoefficients{}, SolverConfig{});
    CHECK(d.r_squared == doctest::Approx(1.0).epsilon(1e-12));
    for (double r : d.residual_norms) CHECK(r < 1e-12);
}

TEST_CASE("linear regression with two samples interpolates") {
    const TriangleMesh a = ellipsoid_mesh(1);
    const TriangleMesh b = deform_gaussian(a, 0.05, 3);
    RegressionData data{{3.0, 7.0}, {a, b}};
    const FitResult fit = fit_linear(data);
    CHECK((fit.intercept.coords() - a.coords()).norm() < 1e-12);
    CHECK((predict(fit, 7.0, MetricCoefficients{}, SolverConfig{}).mesh.coords() - b.coords()).norm() < 1e-12);
    CHECK(fit.normalization.shift == 3.0);
    CHECK(fit.normalization.scale == 4.0);
}

TEST_CASE("linear regression matches a descent least-squares oracle") {
    const TriangleMesh base = ellipsoid_mesh(2);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int instance = 0; instance < 3; ++instance) {
        RegressionData data;
        for (int i = 0; i < 10; ++i) {
            data.x.push_back(u(rng));
            data.y.push_back(base.with_coords(base.coords() + random_vector(base.coords().size(), rng, 0.2)));
        }
        const FitResult fit = fit_linear(data);
        const auto xs = normalize_times(data.x).values;
        std::vector<Eigen::VectorXd> ys;
        for (const auto& y : data.y) ys.push_back(y.coords());
        const auto [a, b] = descent_least_squares(xs, ys);
        CHECK((fit.intercept.coords() - a).norm() / a.norm() < 1e-8);
        CHECK((fit.slope.values() - b).norm() / b.norm() < 1e-8);
    }
}

TEST_CASE("R squared of the constant-mean predictor is zero") {
    const TriangleMesh base = ellipsoid_mesh(1);
    std::mt19937_64 rng(3);
    RegressionData data;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(base.coords().size());
    for (int i = 0; i < 4; ++i) {
        data.x.push_back(i);
        data.y.push_back(base.with_coords(base.coords() + random_vector(base.coords().size(), rng, 0.1)));
        mean += data.y.back().coords() / 4.0;
    }
    FitResult constant;
    constant.method = Method::LR;
    constant.intercept = base.with_coords(mean);
    constant.slope = TangentField::zero(base);
    constant.normalization = normalize_times(data.x).map;
    CHECK(std::abs(diagnostics(constant, data, MetricCoefficients{}, SolverConfig{}).r_squared) < 1e-12);
}

TEST_CASE("losses at the generating geodesic") {
    const SolverConfig cfg;
    const GeodesicData g = make_geodesic_data(1, 5, 0.1, cfg);
    const GeodesicSolver solver(g.p.topology(), MetricCoefficients{}, cfg, g.D);
    double grlr = 0.0, gr = 0.0;
    for (std::size_t i = 0; i < g.data.x.size(); ++i) {
        const Eigen::VectorXd yhat = solver.shoot(g.p.coords(), g.data.x[i] * g.v.values());
        grlr += 0.5 * (yhat - g.data.y[i].coords()).squaredNorm();
        const LogResult r = log_map(g.p.with_coords(yhat), g.data.y[i], MetricCoefficients{}, cfg);
        gr += 0.5 * r.velocity.values().squaredNorm();
    }
    CHECK(grlr == 0.0);
    CHECK(gr == 0.0);
    CHECK(fit_linear(g.data).loss > 0.0);
}

TEST_CASE("geodesic fits on noise-free data") {
    const SolverConfig cfg;
    const GeodesicData g = make_geodesic_data(1, 4, 0.1, cfg);
    const MetricCoefficients c;
    for (Method method : {Method::GRLR, Method::GR}) {
        CAPTURE(to_string(method));
        const FitResult fit = shapereg::fit(method, g.data, c, cfg);
        CHECK(fit.method == method);
        CHECK(fit.converged);
        REQUIRE(fit.loss_trace.size() >= 2);
        for (std::size_t k = 1; k < fit.loss_trace.size(); ++k) CHECK(fit.loss_trace[k] <= fit.loss_trace[k - 1]);
        CHECK(fit.loss == fit.loss_trace.back());
        CHECK(fit.loss <= 1e-6 * fit.loss_trace.front());
        CHECK(rms_per_vertex(fit.intercept.coords() - g.p.coords()) < 0.01 * g.D);
        CHECK(fit.exp_calls > 0);
        if (method == Method::GRLR) CHECK(fit.log_calls == 0);
        if (method == Method::GR) CHECK(fit.log_calls > 0);

        const Prediction at0 = predict(fit, 0.0, c, cfg);
        CHECK(at0.mesh.coords() == fit.intercept.coords());
        const Diagnostics d = diagnostics(fit, g.data, c, cfg);
        CHECK(d.r_squared > 0.999);
        CHECK(d.residual_norms.size() == g.data.x.size());
    }
}

TEST_CASE("prediction at a held-out time matches the generating geodesic") {
    const SolverConfig cfg;
    const GeodesicData g = make_geodesic_data(1, 3, 0.1, cfg);
    const FitResult fit = fit_grlr(g.data, MetricCoefficients{}, cfg);
    const GeodesicSolver solver(g.p.topology(), MetricCoefficients{}, cfg, g.D);
    const Eigen::VectorXd held_out = solver.shoot(g.p.coords(), 0.25 * g.v.values());
    const Prediction pred = predict(fit, 0.25, MetricCoefficients{}, cfg);
    CHECK_FALSE(pred.extrapolated);
    CHECK(rms_per_vertex(pred.mesh.coords() - held_out) < 1e-4 * g.D);
}

TEST_CASE("geodesic fits on noisy data") {
    const SolverConfig cfg;
    const GeodesicData g = make_geodesic_data(1, 5, 0.1, cfg);
    const RegressionData noisy = with_noise(g.data, 0.005, 7);
    const MetricCoefficients c;
    const FitResult gr = fit_geodesic(noisy, c, cfg);
    const FitResult grlr = fit_grlr(noisy, c, cfg);
    for (const FitResult* f : {&gr, &grlr})
        for (std::size_t k = 1; k < f->loss_trace.size(); ++k) CHECK(f->loss_trace[k] <= f->loss_trace[k - 1]);
    // GR starts from the LR solution, so it never ends above that loss
    CHECK(gr.loss <= gr.loss_trace.front());

    // both fitted geodesics sampled at five times stay close
    double sum = 0.0;
    for (int j = 0; j < 5; ++j) {
        const double x = j / 4.0;
        sum += (predict(gr, x, c, cfg).mesh.coords() - predict(grlr, x, c, cfg).mesh.coords()).squaredNorm();
    }
    const double rms = std::sqrt(sum / (5.0 * static_cast<double>(g.p.num_vertices())));
    CHECK(rms < 0.005 * g.D);
}

TEST_CASE("geodesic fits are rotation equivariant") {
    const SolverConfig cfg;
    const GeodesicData g = make_geodesic_data(1, 4, 0.1, cfg);
    const RegressionData noisy = with_noise(g.data, 0.005, 8);
    std::mt19937_64 rng(9);
    const Eigen::Matrix3d R = random_rotation(rng);
    RegressionData turned = noisy;
    for (auto& y : turned.y) y = rotated(y, R);
    const MetricCoefficients c;
    for (Method method : {Method::GRLR, Method::GR}) {
        CAPTURE(to_string(method));
        const FitResult a = shapereg::fit(method, noisy, c, cfg);
        const FitResult b = shapereg::fit(method, turned, c, cfg);
        CHECK(rel_err(b.loss, a.loss) < 1e-6);
        CHECK(rms_per_vertex(b.intercept.coords() - rotated(a.intercept, R).coords()) < 1e-6 * g.D);
        CHECK(rms_per_vertex(b.slope.values() - rotate_field(a.slope.values(), R)) < 1e-6 * g.D);
    }
}

TEST_CASE("fits are reproducible") {
    const SolverConfig cfg;
    const GeodesicData g = make_geodesic_data(1, 4, 0.1, cfg);
    const RegressionData noisy = with_noise(g.data, 0.005, 10);
    for (Method method : {Method::GRLR, Method::GR}) {
        const FitResult a = shapereg::fit(method, noisy, MetricCoefficients{}, cfg);
        const FitResult b = shapereg::fit(method, noisy, MetricCoefficients{}, cfg);
        CHECK(a.intercept.coords() == b.intercept.coords());
        CHECK(a.slope.values() == b.slope.values());
        CHECK(a.loss == b.loss);
        CHECK(a.iterations == b.iterations);
        CHECK(a.loss_trace == b.loss_trace);
        CHECK(a.converged == b.converged);
        CHECK(a.message == b.message);
    }
}

TEST_CASE("regression input validation") {
    const TriangleMesh m = ellipsoid_mesh(1);
    CHECK_THROWS_AS(fit_linear(RegressionData{{1.0}, {m}}), InputError);
    CHECK_THROWS_AS(fit_linear(RegressionData{{1.0, 1.0}, {m, m}}), InputError);
    CHECK_THROWS_AS(fit_linear(RegressionData{{0.0, 1.0}, {m}}), SizeMismatchError);
    CHECK_THROWS_AS(fit_linear(RegressionData{{0.0, 1.0}, {m, ellipsoid_mesh(0)}}), TopologyMismatchError);
    CHECK_THROWS_AS(fit_grlr(RegressionData{{2.0, 2.0}, {m, m}}, MetricCoefficients{}, SolverConfig{}), InputError);
    OptimizerConfig opt;
    opt.shrink = 1.0;
    CHECK_THROWS_AS(opt.validate(), InputError);
    CHECK(parse_method("GrLr") == Method::GRLR);
    CHECK(to_string(Method::GR) == "GR");
    CHECK_THROWS_AS(parse_method("pca"), InputError);
}
