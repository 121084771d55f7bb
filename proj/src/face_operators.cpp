#include "shapereg/face_operators.hpp"

#include <numeric>

#include "shapereg/detail/face_kernel.hpp"

namespace shapereg {

namespace {

detail::FaceGeometry<double> geometry_of(const TriangleMesh& mesh, const Face& t) {
    return detail::face_geometry<double>(mesh.vertex(t[0]), mesh.vertex(t[1]), mesh.vertex(t[2]));
}

} // namespace

double FaceOperators::total_area() const { return std::accumulate(face_areas.begin(), face_areas.end(), 0.0); }

FaceOperators build_face_operators(const TriangleMesh& mesh, Execution exec) {
    const Topology& topo = *mesh.topology();
    const std::size_t nf = topo.num_faces();
    const std::size_t nv = topo.num_vertices();

    FaceOperators ops;
    ops.face_areas.resize(nf);
    ops.frames.resize(nf);
    ops.pullback.resize(nf);
    std::vector<std::array<double, 3>> half_cot(nf);

    for_each_index(exec, nf, [&](std::size_t f) {
        const Face& t = topo.face(f);
        const Eigen::Vector3d e1 = mesh.vertex(t[1]) - mesh.vertex(t[0]);
        const Eigen::Vector3d e2 = mesh.vertex(t[2]) - mesh.vertex(t[0]);
        const double area = 0.5 * e1.cross(e2).norm();
        ops.face_areas[f] = area;
        if (!(area > kMinFaceArea)) return;
        const auto g = geometry_of(mesh, t);
        ops.frames[f] = {g.t1, g.t2, g.n};
        ops.pullback[f] << e1.dot(e1), e1.dot(e2), e2.dot(e1), e2.dot(e2);
        half_cot[f] = g.half_cot;
    });
    for (std::size_t f = 0; f < nf; ++f)
        if (!(ops.face_areas[f] > kMinFaceArea)) throw DegenerateMeshError(f, ops.face_areas[f]);

    ops.vertex_areas = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nv));
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(12 * nf);
    for (std::size_t f = 0; f < nf; ++f) {
        const Face& t = topo.face(f);
        for (int c = 0; c < 3; ++c) {
            ops.vertex_areas[t[c]] += ops.face_areas[f] / 3.0;
            // corner c weights the opposite edge (i, j)
            const int i = t[(c + 1) % 3], j = t[(c + 2) % 3];
            const double w = half_cot[f][c];
            triplets.emplace_back(i, j, -w);
            triplets.emplace_back(j, i, -w);
            triplets.emplace_back(i, i, w);
            triplets.emplace_back(j, j, w);
        }
    }
    ops.laplacian.resize(static_cast<Eigen::Index>(nv), static_cast<Eigen::Index>(nv));
    ops.laplacian.setFromTriplets(triplets.begin(), triplets.end());
    return ops;
}

std::vector<FaceDifferential> one_form(const TriangleMesh& mesh, const TangentField& field) {
    require_field_on(mesh, field);
    const Topology& topo = *mesh.topology();
    std::vector<FaceDifferential> out(topo.num_faces());
    for (std::size_t f = 0; f < topo.num_faces(); ++f) {
        const Face& t = topo.face(f);
        const Eigen::Vector3d e1 = mesh.vertex(t[1]) - mesh.vertex(t[0]);
        const Eigen::Vector3d e2 = mesh.vertex(t[2]) - mesh.vertex(t[0]);
        const double area = 0.5 * e1.cross(e2).norm();
        if (!(area > kMinFaceArea)) throw DegenerateMeshError(f, area);
        const auto g = geometry_of(mesh, t);
        Eigen::Matrix2d edges;  // frame coordinates of e1, e2 as columns
        edges << g.t1.dot(e1), g.t1.dot(e2), g.t2.dot(e1), g.t2.dot(e2);
        Eigen::Matrix<double, 3, 2> diffs;
        diffs.col(0) = field.at(t[1]) - field.at(t[0]);
        diffs.col(1) = field.at(t[2]) - field.at(t[0]);
        out[f] = diffs * edges.inverse();
    }
    return out;
}

OneFormDecomposition decompose_one_form(const FaceOperators& ops, std::span<const FaceDifferential> dh) {
    if (dh.size() != ops.frames.size())
        throw SizeMismatchError("one-form has " + std::to_string(dh.size()) + " faces, operators have " +
                                std::to_string(ops.frames.size()));
    OneFormDecomposition out;
    const std::size_t nf = dh.size();
    out.shear.resize(nf);
    out.scale.resize(nf);
    out.bend.resize(nf);
    out.twist.resize(nf);
    for (std::size_t f = 0; f < nf; ++f) {
        const FaceFrame& fr = ops.frames[f];
        Eigen::Matrix<double, 3, 2> tangent_basis;
        tangent_basis << fr.t1, fr.t2;
        const Eigen::Matrix2d a = tangent_basis.transpose() * dh[f];
        const Eigen::Matrix2d trace_part = 0.5 * a.trace() * Eigen::Matrix2d::Identity();
        const Eigen::Matrix2d skew_part = 0.5 * (a - a.transpose());
        const Eigen::Matrix2d shear_part = 0.5 * (a + a.transpose()) - trace_part;
        out.bend[f] = fr.normal * (fr.normal.transpose() * dh[f]);
        out.scale[f] = tangent_basis * trace_part;
        out.twist[f] = tangent_basis * skew_part;
        out.shear[f] = tangent_basis * shear_part;
    }
    return out;
}

} // namespace shapereg
