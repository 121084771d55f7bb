#pragma once

#include <cstdint>

#include <Eigen/SparseCore>

#include "shapereg/coefficients.hpp"
#include "shapereg/execution.hpp"
#include "shapereg/mesh.hpp"
#include "shapereg/path.hpp"

namespace shapereg {

// G(q) as a sparse symmetric 3N x 3N matrix in original vertex numbering,
// unknowns ordered [x0 y0 z0 x1 ...].
struct MetricMatrix {
    Eigen::SparseMatrix<double> matrix;
    std::uint64_t fingerprint = 0;  // of the base mesh (coordinates + faces)
};

// Six-term Sobolev inner product evaluated through the one-form decomposition:
//   a0 sum_v <h,k> A_v + sum_f (a1 <dh_m,dk_m> + b1 <dh_+,dk_+> + c1 <dh_perp,dk_perp>
//   + d1 <dh_0,dk_0>) A_f + a2 sum_v <Lap h, Lap k> A_v,  Lap = M^-1 L.
double inner_product(const TriangleMesh& mesh, const TangentField& h, const TangentField& k,
                     const MetricCoefficients& c);

double squared_norm(const TriangleMesh& mesh, const TangentField& h, const MetricCoefficients& c);

MetricMatrix metric_matrix(const TriangleMesh& mesh, const MetricCoefficients& c,
                           Execution exec = Execution::parallel);

// sum_t ||(q_{t+1} - q_t) / dt||^2_{q_t} dt over the path.
double path_energy(const GeodesicPath& path, const MetricCoefficients& c);

std::uint64_t mesh_fingerprint(const TriangleMesh& mesh);

namespace reference {

// Straightforward triplet assembly (serial, sparse products for the Laplacian
// term). Kept to check and benchmark the pattern-based kernel.
Eigen::SparseMatrix<double> metric_matrix_triplets(const TriangleMesh& mesh, const MetricCoefficients& c);

} // namespace reference

} // namespace shapereg
