#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "shapereg/coefficients.hpp"
#include "shapereg/detail/face_kernel.hpp"
#include "shapereg/execution.hpp"
#include "shapereg/mesh.hpp"

namespace shapereg::detail {

// Position of a 3x3 block inside the CSC value array:
// entry (d, e) of the block lives at base + e * stride + d.
struct BlockSlot {
    int base = 0;
    int stride = 0;
};

// Fixed sparsity layout of G(q) for one triangulation. Vertices are renumbered
// with AMD once so the factorization can use natural ordering afterwards; the
// matrix is stored in that permuted numbering with dense 3x3 vertex blocks.
struct MetricPattern {
    std::size_t num_vertices = 0;
    std::vector<int> perm;      // original vertex -> permuted vertex
    std::vector<int> inv_perm;  // permuted vertex -> original vertex

    std::vector<int> outer;  // scalar CSC, size 3N + 1
    std::vector<int> inner;

    std::vector<std::array<BlockSlot, 9>> face_slots;  // (a, b) -> slot, a,b local corners

    // Closed one-ring R(v) = {v} + neighbours, for the Laplacian term.
    std::vector<std::size_t> ring_offset;
    std::vector<int> ring;
    std::vector<std::size_t> ring_pair_offset;  // |R(v)|^2 slots per vertex
    std::vector<BlockSlot> ring_pair_slots;
    // Position of t[d] inside R(t[c]) for every face corner pair (c, d).
    std::vector<std::array<std::array<int, 3>, 3>> face_ring_pos;

    explicit MetricPattern(const Topology& topo);

    Eigen::SparseMatrix<double> empty_matrix() const;
};

enum class DerivativeBackend { automatic, finite_difference };

// Per-face data at a given configuration.
struct FaceState {
    std::vector<FaceGeometry<double>> geometry;
    Eigen::VectorXd vertex_areas;
};

// Evaluates G(x) and its derivatives for one triangulation and coefficient set.
// All entry points take and return vectors in original vertex numbering,
// except `assemble`, which writes the permuted matrix used for factorization.
class MetricEngine {
public:
    MetricEngine(TopologyPtr topology, const MetricCoefficients& coeffs, Execution exec = Execution::parallel);

    const Topology& topology() const { return *topology_; }
    const TopologyPtr& topology_ptr() const { return topology_; }
    const MetricCoefficients& coefficients() const { return coeffs_; }
    const MetricPattern& pattern() const { return *pattern_; }
    Execution execution() const { return exec_; }

    // Throws DegenerateMeshError.
    FaceState face_state(const Eigen::VectorXd& x) const;

    // Writes G(x) into `matrix`, which must come from pattern().empty_matrix().
    void assemble(const Eigen::VectorXd& x, Eigen::SparseMatrix<double>& matrix) const;
    void assemble(const FaceState& state, Eigen::SparseMatrix<double>& matrix) const;

    Eigen::VectorXd apply(const Eigen::VectorXd& x, const Eigen::VectorXd& v) const;
    Eigen::VectorXd apply(const FaceState& state, const Eigen::VectorXd& v) const;

    double bilinear(const Eigen::VectorXd& x, const Eigen::VectorXd& a, const Eigen::VectorXd& b) const;

    // Gradient in x of a^T G(x) b with a, b held fixed.
    Eigen::VectorXd bilinear_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                                      DerivativeBackend backend = DerivativeBackend::automatic,
                                      double fd_step = 1e-6) const;

    Eigen::VectorXd to_permuted(const Eigen::VectorXd& v) const;
    Eigen::VectorXd from_permuted(const Eigen::VectorXd& v) const;

    // Local 9x9 matrix of the face terms (a0..d1) for one face.
    Eigen::Matrix<double, 9, 9> face_block(const FaceGeometry<double>& g) const;

private:
    // (L a)_v / A_v at every vertex.
    Eigen::VectorXd laplacian_over_area(const FaceState& state, const Eigen::VectorXd& a) const;
    Eigen::VectorXd laplacian_apply(const FaceState& state, const Eigen::VectorXd& a) const;
    Eigen::VectorXd gather(const std::vector<Eigen::Matrix<double, 9, 1>>& per_face) const;

    TopologyPtr topology_;
    MetricCoefficients coeffs_;
    Execution exec_;
    const MetricPattern* pattern_;
};

inline std::array<Eigen::Vector3d, 3> gather_face(const Eigen::VectorXd& values, const Face& t) {
    return {values.segment<3>(3 * t[0]), values.segment<3>(3 * t[1]), values.segment<3>(3 * t[2])};
}

} // namespace shapereg::detail
