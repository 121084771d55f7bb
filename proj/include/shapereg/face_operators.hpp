#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "shapereg/execution.hpp"
#include "shapereg/mesh.hpp"

namespace shapereg {

struct FaceFrame {
    Eigen::Vector3d t1, t2, normal;
};

// Discrete geometry of a mesh: everything the Sobolev metric reads off q.
struct FaceOperators {
    std::vector<double> face_areas;
    std::vector<FaceFrame> frames;
    std::vector<Eigen::Matrix2d> pullback;  // Gram matrix of (e1, e2)
    Eigen::VectorXd vertex_areas;           // barycentric lumping
    Eigen::SparseMatrix<double> laplacian;  // cotangent stiffness, symmetric, rows sum to 0

    double total_area() const;
};

// Throws DegenerateMeshError if a face area is <= 1e-12.
FaceOperators build_face_operators(const TriangleMesh& mesh, Execution exec = Execution::parallel);

// dh on one face: maps frame coordinates of a tangent vector to R^3.
using FaceDifferential = Eigen::Matrix<double, 3, 2>;

std::vector<FaceDifferential> one_form(const TriangleMesh& mesh, const TangentField& field);

struct OneFormDecomposition {
    std::vector<FaceDifferential> shear;   // dh_m: traceless symmetric tangential part
    std::vector<FaceDifferential> scale;   // dh_+: trace part
    std::vector<FaceDifferential> bend;    // dh_perp: normal-valued part
    std::vector<FaceDifferential> twist;   // dh_0: skew tangential part
};

OneFormDecomposition decompose_one_form(const FaceOperators& ops, std::span<const FaceDifferential> dh);

// Pairing g_q^{-1}(dh, dk) on one face. Frames are orthonormal, so this is the
// Frobenius product of the frame-coordinate matrices.
inline double face_pairing(const FaceDifferential& a, const FaceDifferential& b) { return (a.array() * b.array()).sum(); }

} // namespace shapereg
