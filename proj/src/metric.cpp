#include "shapereg/metric.hpp"

#include <cstring>

#include "shapereg/detail/metric_engine.hpp"
#include "shapereg/face_operators.hpp"

namespace shapereg {

double inner_product(const TriangleMesh& mesh, const TangentField& h, const TangentField& k,
                     const MetricCoefficients& c) {
    c.validate();
    require_field_on(mesh, h);
    require_field_on(mesh, k);
    const FaceOperators ops = build_face_operators(mesh);
    const Eigen::Index n = static_cast<Eigen::Index>(mesh.num_vertices());

    double pointwise = 0.0;
    for (Eigen::Index v = 0; v < n; ++v) pointwise += h.at(static_cast<std::size_t>(v)).dot(k.at(static_cast<std::size_t>(v))) * ops.vertex_areas[v];

    const auto dh = decompose_one_form(ops, one_form(mesh, h));
    const auto dk = decompose_one_form(ops, one_form(mesh, k));
    double first_order = 0.0;
    for (std::size_t f = 0; f < ops.face_areas.size(); ++f) {
        first_order += ops.face_areas[f] *
                       (c.a1 * face_pairing(dh.shear[f], dk.shear[f]) + c.b1 * face_pairing(dh.scale[f], dk.scale[f]) +
                        c.c1 * face_pairing(dh.bend[f], dk.bend[f]) + c.d1 * face_pairing(dh.twist[f], dk.twist[f]));
    }

    double second_order = 0.0;
    if (c.a2 != 0.0) {
        const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>> hv(h.values().data(), n, 3);
        const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>> kv(k.values().data(), n, 3);
        const Eigen::MatrixXd lap_h = ops.vertex_areas.cwiseInverse().asDiagonal() * (ops.laplacian * hv);
        const Eigen::MatrixXd lap_k = ops.vertex_areas.cwiseInverse().asDiagonal() * (ops.laplacian * kv);
        for (Eigen::Index v = 0; v < n; ++v) second_order += lap_h.row(v).dot(lap_k.row(v)) * ops.vertex_areas[v];
    }
    return c.a0 * pointwise + first_order + c.a2 * second_order;
}

double squared_norm(const TriangleMesh& mesh, const TangentField& h, const MetricCoefficients& c) {
    return inner_product(mesh, h, h, c);
}

std::uint64_t mesh_fingerprint(const TriangleMesh& mesh) {
    // FNV-1a over coordinate bytes and face indices
    std::uint64_t hash = 1469598103934665603ULL;
    auto mix = [&](const void* data, std::size_t bytes) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < bytes; ++i) {
            hash ^= p[i];
            hash *= 1099511628211ULL;
        }
    };
    mix(mesh.coords().data(), sizeof(double) * static_cast<std::size_t>(mesh.coords().size()));
    for (const Face& t : mesh.faces()) mix(t.data(), sizeof(int) * 3);
    return hash;
}

MetricMatrix metric_matrix(const TriangleMesh& mesh, const MetricCoefficients& c, Execution exec) {
    const detail::MetricEngine engine(mesh.topology(), c, exec);
    Eigen::SparseMatrix<double> permuted = engine.pattern().empty_matrix();
    engine.assemble(mesh.coords(), permuted);

    const auto& inv = engine.pattern().inv_perm;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(permuted.nonZeros()));
    for (Eigen::Index col = 0; col < permuted.outerSize(); ++col)
        for (Eigen::SparseMatrix<double>::InnerIterator it(permuted, col); it; ++it) {
            const auto r = it.row(), cc = it.col();
            trip.emplace_back(3 * inv[static_cast<std::size_t>(r / 3)] + static_cast<int>(r % 3),
                              3 * inv[static_cast<std::size_t>(cc / 3)] + static_cast<int>(cc % 3), it.value());
        }
    MetricMatrix out;
    out.matrix.resize(permuted.rows(), permuted.cols());
    out.matrix.setFromTriplets(trip.begin(), trip.end());
    out.fingerprint = mesh_fingerprint(mesh);
    return out;
}

double path_energy(const GeodesicPath& path, const MetricCoefficients& c) {
    path.validate();
    const detail::MetricEngine engine(path.meshes.front().topology(), c, Execution::serial);
    double energy = 0.0;
    for (std::size_t t = 0; t + 1 < path.size(); ++t) {
        const double dt = path.times[t + 1] - path.times[t];
        const Eigen::VectorXd vel = (path.meshes[t + 1].coords() - path.meshes[t].coords()) / dt;
        energy += engine.bilinear(path.meshes[t].coords(), vel, vel) * dt;
    }
    return energy;
}

void GeodesicPath::validate() const {
    if (meshes.size() < 2) throw InputError("a path needs at least two meshes");
    if (times.size() != meshes.size()) throw SizeMismatchError("path times and meshes differ in length");
    if (times.front() != 0.0 || times.back() != 1.0) throw InputError("path times must start at 0 and end at 1");
    for (std::size_t i = 1; i < times.size(); ++i) {
        if (!(times[i] > times[i - 1])) throw InputError("path times must be strictly increasing");
        require_same_topology(*meshes.front().topology(), *meshes[i].topology());
    }
}

std::vector<double> GeodesicPath::uniform_times(std::size_t count) {
    if (count < 2) throw InputError("need at least two time samples");
    std::vector<double> t(count);
    for (std::size_t j = 0; j < count; ++j) t[j] = static_cast<double>(j) / static_cast<double>(count - 1);
    t.back() = 1.0;
    return t;
}

namespace reference {

Eigen::SparseMatrix<double> metric_matrix_triplets(const TriangleMesh& mesh, const MetricCoefficients& c) {
    c.validate();
    const detail::MetricEngine engine(mesh.topology(), c, Execution::serial);
    const Topology& topo = *mesh.topology();
    const auto n3 = static_cast<Eigen::Index>(3 * topo.num_vertices());
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(81 * topo.num_faces());
    for (std::size_t f = 0; f < topo.num_faces(); ++f) {
        const Face& t = topo.face(f);
        const auto g = detail::face_geometry<double>(mesh.vertex(t[0]), mesh.vertex(t[1]), mesh.vertex(t[2]));
        const auto block = engine.face_block(g);
        for (int a = 0; a < 9; ++a)
            for (int b = 0; b < 9; ++b) trip.emplace_back(3 * t[a / 3] + a % 3, 3 * t[b / 3] + b % 3, block(a, b));
    }
    Eigen::SparseMatrix<double> g(n3, n3);
    g.setFromTriplets(trip.begin(), trip.end());
    if (c.a2 != 0.0) {
        const FaceOperators ops = build_face_operators(mesh, Execution::serial);
        std::vector<Eigen::Triplet<double>> lt;
        for (Eigen::Index col = 0; col < ops.laplacian.outerSize(); ++col)
            for (Eigen::SparseMatrix<double>::InnerIterator it(ops.laplacian, col); it; ++it)
                for (int d = 0; d < 3; ++d)
                    lt.emplace_back(static_cast<int>(3 * it.row() + d), static_cast<int>(3 * it.col() + d), it.value());
        Eigen::SparseMatrix<double> l3(n3, n3);
        l3.setFromTriplets(lt.begin(), lt.end());
        Eigen::VectorXd inv_area(n3);
        for (Eigen::Index i = 0; i < n3; ++i) inv_area[i] = 1.0 / ops.vertex_areas[i / 3];
        const Eigen::SparseMatrix<double> scaled = inv_area.asDiagonal() * l3;
        const Eigen::SparseMatrix<double> bilap = Eigen::SparseMatrix<double>(l3.transpose()) * scaled;
        g += c.a2 * bilap;
    }
    return g;
}

} // namespace reference

} // namespace shapereg
