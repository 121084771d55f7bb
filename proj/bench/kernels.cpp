#include <map>

#include <benchmark/benchmark.h>

#include "shapereg/bench.hpp"
#include "shapereg/geodesic.hpp"
#include "shapereg/metric.hpp"

using namespace shapereg;

namespace {

struct Fixture {
    TriangleMesh mesh;
    Eigen::VectorXd a, b;
};

const Fixture& fixture(int level) {
    static std::map<int, Fixture> cache;
    auto it = cache.find(level);
    if (it == cache.end()) {
        Fixture f;
        f.mesh = deform_gaussian(ellipsoid_mesh(level), 0.01, 1);
        f.a = Eigen::VectorXd::Random(f.mesh.coords().size());
        f.b = Eigen::VectorXd::Random(f.mesh.coords().size());
        it = cache.emplace(level, std::move(f)).first;
    }
    return it->second;
}

Execution execution_of(const benchmark::State& state) {
    return state.range(1) ? Execution::parallel : Execution::serial;
}

void BM_Assemble(benchmark::State& state) {
    const Fixture& f = fixture(static_cast<int>(state.range(0)));
    const detail::MetricEngine engine(f.mesh.topology(), MetricCoefficients{}, execution_of(state));
    Eigen::SparseMatrix<double> G = engine.pattern().empty_matrix();
    for (auto _ : state) {
        engine.assemble(f.mesh.coords(), G);
        benchmark::DoNotOptimize(G.valuePtr());
    }
    state.counters["N"] = static_cast<double>(f.mesh.num_vertices());
}

void BM_AssembleTriplets(benchmark::State& state) {
    const Fixture& f = fixture(static_cast<int>(state.range(0)));
    for (auto _ : state) {
        auto G = reference::metric_matrix_triplets(f.mesh, MetricCoefficients{});
        benchmark::DoNotOptimize(G.valuePtr());
    }
    state.counters["N"] = static_cast<double>(f.mesh.num_vertices());
}

void BM_BilinearGradient(benchmark::State& state) {
    const Fixture& f = fixture(static_cast<int>(state.range(0)));
    const detail::MetricEngine engine(f.mesh.topology(), MetricCoefficients{}, execution_of(state));
    const auto backend = state.range(2) ? DerivativeBackend::automatic : DerivativeBackend::finite_difference;
    for (auto _ : state) {
        auto g = engine.bilinear_gradient(f.mesh.coords(), f.a, f.b, backend, 1e-6);
        benchmark::DoNotOptimize(g.data());
    }
}

void BM_Shoot(benchmark::State& state) {
    const int level = static_cast<int>(state.range(0));
    const TriangleMesh p = ellipsoid_mesh(level);
    const TriangleMesh q = deform_gaussian(p, 0.01, 3);
    SolverConfig cfg;
    cfg.execution = execution_of(state);
    const GeodesicSolver solver(p.topology(), MetricCoefficients{}, cfg, mesh_diameter(p));
    const Eigen::VectorXd v = q.coords() - p.coords();
    for (auto _ : state) {
        auto x = solver.shoot(p.coords(), v);
        benchmark::DoNotOptimize(x.data());
    }
}

void BM_LineSequence(benchmark::State& state) {
    const TriangleMesh p = ellipsoid_mesh(static_cast<int>(state.range(0)));
    const TriangleMesh q = deform_gaussian(p, 0.01, 3);
    for (auto _ : state) {
        auto path = line_sequence(p, q, 5);
        benchmark::DoNotOptimize(path.meshes.data());
    }
}

} // namespace

// args: level, parallel
BENCHMARK(BM_Assemble)->ArgsProduct({{2, 3, 4}, {0, 1}})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_AssembleTriplets)->Args({2})->Args({3})->Args({4})->Unit(benchmark::kMicrosecond);
// args: level, parallel, automatic differentiation
BENCHMARK(BM_BilinearGradient)->ArgsProduct({{2, 3}, {0, 1}, {0, 1}})->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Shoot)->ArgsProduct({{2}, {0, 1}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LineSequence)->Args({2})->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
