#include "shapereg/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <utility>

namespace shapereg {

Topology::Topology(std::size_t num_vertices, std::vector<Face> faces)
    : num_vertices_(num_vertices), faces_(std::move(faces)) {
    std::map<std::pair<int, int>, int> directed;
    for (std::size_t f = 0; f < faces_.size(); ++f) {
        const Face& t = faces_[f];
        for (int v : t) {
            if (v < 0 || static_cast<std::size_t>(v) >= num_vertices_)
                throw InputError("face " + std::to_string(f) + " references vertex " + std::to_string(v) +
                                 " outside [0, " + std::to_string(num_vertices_) + ")");
        }
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2])
            throw InputError("face " + std::to_string(f) + " repeats a vertex");
        for (int k = 0; k < 3; ++k) {
            const auto edge = std::make_pair(t[k], t[(k + 1) % 3]);
            if (++directed[edge] > 1)
                throw InputError("edge (" + std::to_string(edge.first) + "," + std::to_string(edge.second) +
                                 ") is non-manifold or inconsistently oriented");
        }
    }

    // vertex -> incident faces
    std::vector<std::size_t> count(num_vertices_ + 1, 0);
    for (const Face& t : faces_)
        for (int v : t) ++count[static_cast<std::size_t>(v) + 1];
    std::partial_sum(count.begin(), count.end(), count.begin());
    vf_offset_ = count;
    vf_index_.assign(vf_offset_.back(), 0);
    std::vector<std::size_t> cursor(vf_offset_.begin(), vf_offset_.end() - 1);
    for (std::size_t f = 0; f < faces_.size(); ++f)
        for (int v : faces_[f]) vf_index_[cursor[static_cast<std::size_t>(v)]++] = static_cast<int>(f);

    // one-ring neighbours
    std::vector<std::vector<int>> nb(num_vertices_);
    for (const Face& t : faces_)
        for (int k = 0; k < 3; ++k) {
            nb[static_cast<std::size_t>(t[k])].push_back(t[(k + 1) % 3]);
            nb[static_cast<std::size_t>(t[k])].push_back(t[(k + 2) % 3]);
        }
    nb_offset_.assign(num_vertices_ + 1, 0);
    for (std::size_t v = 0; v < num_vertices_; ++v) {
        auto& list = nb[v];
        std::sort(list.begin(), list.end());
        list.erase(std::unique(list.begin(), list.end()), list.end());
        nb_offset_[v + 1] = nb_offset_[v] + list.size();
    }
    nb_index_.reserve(nb_offset_.back());
    for (const auto& list : nb) nb_index_.insert(nb_index_.end(), list.begin(), list.end());
}

bool Topology::same_as(const Topology& other) const noexcept {
    return this == &other || (num_vertices_ == other.num_vertices_ && faces_ == other.faces_);
}

void require_same_topology(const Topology& a, const Topology& b) {
    if (!a.same_as(b))
        throw TopologyMismatchError("meshes do not share a triangulation (" + std::to_string(a.num_vertices()) +
                                    "/" + std::to_string(a.num_faces()) + " vs " +
                                    std::to_string(b.num_vertices()) + "/" + std::to_string(b.num_faces()) + ")");
}

TriangleMesh::TriangleMesh(TopologyPtr topology, Eigen::VectorXd coords)
    : topology_(std::move(topology)), coords_(std::move(coords)) {
    if (!topology_) throw InputError("mesh without topology");
    if (static_cast<std::size_t>(coords_.size()) != 3 * topology_->num_vertices())
        throw SizeMismatchError("coordinate vector has " + std::to_string(coords_.size()) + " entries, expected " +
                                std::to_string(3 * topology_->num_vertices()));
}

TriangleMesh::TriangleMesh(const std::vector<Eigen::Vector3d>& vertices, std::vector<Face> faces) {
    topology_ = std::make_shared<const Topology>(vertices.size(), std::move(faces));
    coords_.resize(static_cast<Eigen::Index>(3 * vertices.size()));
    for (std::size_t i = 0; i < vertices.size(); ++i) coords_.segment<3>(3 * static_cast<Eigen::Index>(i)) = vertices[i];
}

void TriangleMesh::check_non_degenerate() const {
    for (std::size_t f = 0; f < num_faces(); ++f) {
        const Face& t = topology_->face(f);
        const Eigen::Vector3d p0 = vertex(t[0]);
        const double area = 0.5 * (vertex(t[1]) - p0).cross(vertex(t[2]) - p0).norm();
        if (!(area > kMinFaceArea)) throw DegenerateMeshError(f, area);
    }
}

TangentField::TangentField(TopologyPtr topology, Eigen::VectorXd values)
    : topology_(std::move(topology)), values_(std::move(values)) {
    if (topology_ && static_cast<std::size_t>(values_.size()) != 3 * topology_->num_vertices())
        throw SizeMismatchError("field has " + std::to_string(values_.size() / 3) + " vectors, mesh has " +
                                std::to_string(topology_->num_vertices()) + " vertices");
}

TangentField TangentField::zero(const TriangleMesh& base) {
    return {base.topology(), Eigen::VectorXd::Zero(base.coords().size())};
}

TangentField TangentField::difference(const TriangleMesh& q, const TriangleMesh& p) {
    require_same_topology(*q.topology(), *p.topology());
    return {p.topology(), q.coords() - p.coords()};
}

void require_field_on(const TriangleMesh& mesh, const TangentField& field) {
    if (field.values().size() != mesh.coords().size())
        throw SizeMismatchError("field has " + std::to_string(field.num_vertices()) + " vectors, mesh has " +
                                std::to_string(mesh.num_vertices()) + " vertices");
    if (field.topology() && mesh.topology()) require_same_topology(*mesh.topology(), *field.topology());
}

double mesh_diameter(std::span<const Eigen::Vector3d> points) {
    const auto n = static_cast<std::int64_t>(points.size());
    double best = 0.0;
#pragma omp parallel for reduction(max : best) schedule(dynamic, 16)
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = i + 1; j < n; ++j)
            best = std::max(best, (points[static_cast<std::size_t>(i)] - points[static_cast<std::size_t>(j)]).squaredNorm());
    return std::sqrt(best);
}

double mesh_diameter(const TriangleMesh& mesh) {
    std::vector<Eigen::Vector3d> pts(mesh.num_vertices());
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = mesh.vertex(i);
    return mesh_diameter(pts);
}

namespace {

struct Icosphere {
    std::vector<Eigen::Vector3d> vertices;
    std::vector<Face> faces;
};

// Icosahedron with vertices at both poles and two staggered rings of five.
Icosphere icosahedron() {
    Icosphere s;
    const double z = 1.0 / std::sqrt(5.0);
    const double r = 2.0 / std::sqrt(5.0);
    const double pi = std::acos(-1.0);
    s.vertices.emplace_back(0.0, 0.0, 1.0);
    for (int k = 0; k < 5; ++k) {
        const double a = 2.0 * pi * k / 5.0;
        s.vertices.emplace_back(r * std::cos(a), r * std::sin(a), z);
    }
    for (int k = 0; k < 5; ++k) {
        const double a = 2.0 * pi * (k + 0.5) / 5.0;
        s.vertices.emplace_back(r * std::cos(a), r * std::sin(a), -z);
    }
    s.vertices.emplace_back(0.0, 0.0, -1.0);
    for (int k = 0; k < 5; ++k) {
        const int u0 = 1 + k, u1 = 1 + (k + 1) % 5;
        const int l0 = 6 + k, l1 = 6 + (k + 1) % 5;
        s.faces.push_back({0, u0, u1});
        s.faces.push_back({u0, l0, u1});
        s.faces.push_back({u1, l0, l1});
        s.faces.push_back({11, l1, l0});
    }
    return s;
}

Icosphere subdivide(const Icosphere& in) {
    Icosphere out;
    out.vertices = in.vertices;
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
        const auto key = std::minmax(a, b);
        auto it = midpoint.find(key);
        if (it != midpoint.end()) return it->second;
        const int idx = static_cast<int>(out.vertices.size());
        out.vertices.push_back((in.vertices[static_cast<std::size_t>(a)] + in.vertices[static_cast<std::size_t>(b)]).normalized());
        midpoint.emplace(key, idx);
        return idx;
    };
    out.faces.reserve(4 * in.faces.size());
    for (const Face& t : in.faces) {
        const int a = mid(t[0], t[1]), b = mid(t[1], t[2]), c = mid(t[2], t[0]);
        out.faces.push_back({t[0], a, c});
        out.faces.push_back({t[1], b, a});
        out.faces.push_back({t[2], c, b});
        out.faces.push_back({a, b, c});
    }
    return out;
}

} // namespace

TriangleMesh ellipsoid_mesh(int level, const Eigen::Vector3d& semi_axes) {
    if (level < 0) throw InputError("subdivision level must be >= 0");
    Icosphere s = icosahedron();
    for (int l = 0; l < level; ++l) s = subdivide(s);
    for (auto& v : s.vertices) v = v.cwiseProduct(semi_axes);
    return {s.vertices, std::move(s.faces)};
}

TriangleMesh deform_gaussian(const TriangleMesh& mesh, double deformation, std::uint64_t seed) {
    if (deformation < 0.0) throw InputError("deformation must be >= 0");
    if (deformation == 0.0) return mesh;
    const double sigma = deformation * mesh_diameter(mesh);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd coords = mesh.coords();
    for (Eigen::Index i = 0; i < coords.size(); ++i) coords[i] += sigma * gauss(rng);
    return mesh.with_coords(std::move(coords));
}

Eigen::VectorXd rotate_field(const Eigen::VectorXd& values, const Eigen::Matrix3d& rotation) {
    Eigen::VectorXd out(values.size());
    for (Eigen::Index i = 0; i + 2 < values.size(); i += 3) out.segment<3>(i) = rotation * values.segment<3>(i);
    return out;
}

TriangleMesh rotated(const TriangleMesh& mesh, const Eigen::Matrix3d& rotation) {
    return mesh.with_coords(rotate_field(mesh.coords(), rotation));
}

} // namespace shapereg
