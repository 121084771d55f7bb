#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "shapereg/errors.hpp"

namespace shapereg {

using Face = std::array<int, 3>;

namespace detail {
struct MetricPattern;
}

// Fixed triangulation shared by every mesh along a path or in a regression
// data set. Immutable after construction; meshes hold it by shared_ptr so a
// topology check is usually a pointer comparison.
class Topology {
public:
    // Validates index range, repeated vertices, edge-manifoldness and
    // consistent orientation. Throws InputError.
    Topology(std::size_t num_vertices, std::vector<Face> faces);

    std::size_t num_vertices() const noexcept { return num_vertices_; }
    std::size_t num_faces() const noexcept { return faces_.size(); }
    std::span<const Face> faces() const noexcept { return faces_; }
    const Face& face(std::size_t f) const { return faces_[f]; }

    // Faces incident to v, ascending.
    std::span<const int> incident_faces(std::size_t v) const {
        return {vf_index_.data() + vf_offset_[v], vf_index_.data() + vf_offset_[v + 1]};
    }
    // One-ring neighbours of v, ascending.
    std::span<const int> neighbors(std::size_t v) const {
        return {nb_index_.data() + nb_offset_[v], nb_index_.data() + nb_offset_[v + 1]};
    }

    bool same_as(const Topology& other) const noexcept;

    // Sparsity layout of the Sobolev metric matrix, built on first use.
    const detail::MetricPattern& metric_pattern() const;

private:
    std::size_t num_vertices_;
    std::vector<Face> faces_;
    std::vector<std::size_t> vf_offset_;
    std::vector<int> vf_index_;
    std::vector<std::size_t> nb_offset_;
    std::vector<int> nb_index_;

    mutable std::once_flag pattern_once_;
    mutable std::shared_ptr<const detail::MetricPattern> pattern_;
};

using TopologyPtr = std::shared_ptr<const Topology>;

// Vertex coordinates stored flat as [x0 y0 z0 x1 y1 z1 ...] over a shared
// triangulation.
class TriangleMesh {
public:
    TriangleMesh() = default;
    TriangleMesh(TopologyPtr topology, Eigen::VectorXd coords);
    TriangleMesh(const std::vector<Eigen::Vector3d>& vertices, std::vector<Face> faces);

    std::size_t num_vertices() const noexcept { return topology_ ? topology_->num_vertices() : 0; }
    std::size_t num_faces() const noexcept { return topology_ ? topology_->num_faces() : 0; }
    std::span<const Face> faces() const noexcept { return topology_->faces(); }

    const TopologyPtr& topology() const noexcept { return topology_; }
    const Eigen::VectorXd& coords() const noexcept { return coords_; }
    Eigen::VectorXd& coords() noexcept { return coords_; }

    Eigen::Vector3d vertex(std::size_t i) const { return coords_.segment<3>(3 * static_cast<Eigen::Index>(i)); }
    Eigen::Ref<Eigen::Vector3d> vertex_ref(std::size_t i) {
        return coords_.segment<3>(3 * static_cast<Eigen::Index>(i));
    }

    TriangleMesh with_coords(Eigen::VectorXd coords) const { return {topology_, std::move(coords)}; }

    // Throws DegenerateMeshError when some face area is <= 1e-12.
    void check_non_degenerate() const;

private:
    TopologyPtr topology_;
    Eigen::VectorXd coords_;
};

// A per-vertex 3-vector field living on a base mesh (h, k, v, residuals).
class TangentField {
public:
    TangentField() = default;
    TangentField(TopologyPtr topology, Eigen::VectorXd values);

    static TangentField zero(const TriangleMesh& base);
    // Field q - p; throws TopologyMismatchError.
    static TangentField difference(const TriangleMesh& q, const TriangleMesh& p);

    std::size_t num_vertices() const noexcept { return static_cast<std::size_t>(values_.size() / 3); }
    const TopologyPtr& topology() const noexcept { return topology_; }
    const Eigen::VectorXd& values() const noexcept { return values_; }
    Eigen::VectorXd& values() noexcept { return values_; }
    Eigen::Vector3d at(std::size_t i) const { return values_.segment<3>(3 * static_cast<Eigen::Index>(i)); }

private:
    TopologyPtr topology_;
    Eigen::VectorXd values_;
};

inline constexpr double kMinFaceArea = 1e-12;

void require_same_topology(const Topology& a, const Topology& b);
void require_field_on(const TriangleMesh& mesh, const TangentField& field);

// Maximum pairwise vertex distance (exact O(N^2) scan).
double mesh_diameter(const TriangleMesh& mesh);
double mesh_diameter(std::span<const Eigen::Vector3d> points);

// Icosphere with a vertex on each pole, subdivided `level` times, projected on
// the unit sphere and scaled by `semi_axes`. N = 10 * 4^level + 2.
TriangleMesh ellipsoid_mesh(int level, const Eigen::Vector3d& semi_axes = Eigen::Vector3d(2.0, 2.0, 3.0));

// Adds isotropic Gaussian noise with sigma = deformation * diameter(mesh) to
// every vertex. Deterministic in `seed`.
TriangleMesh deform_gaussian(const TriangleMesh& mesh, double deformation, std::uint64_t seed);

// Rigid motion helpers used by equivariance checks and the CLI.
TriangleMesh rotated(const TriangleMesh& mesh, const Eigen::Matrix3d& rotation);
Eigen::VectorXd rotate_field(const Eigen::VectorXd& values, const Eigen::Matrix3d& rotation);

} // namespace shapereg
