#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "shapereg/mesh.hpp"

namespace testing {

using shapereg::Face;
using shapereg::TangentField;
using shapereg::TriangleMesh;

inline TriangleMesh unit_square() {
    return TriangleMesh({{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0}}, {{0, 1, 2}, {0, 2, 3}});
}

// n x n grid of unit-square cells in the z = 0 plane.
inline TriangleMesh flat_grid(int n, double size = 1.0) {
    std::vector<Eigen::Vector3d> v;
    std::vector<Face> f;
    for (int j = 0; j <= n; ++j)
        for (int i = 0; i <= n; ++i) v.emplace_back(size * i / n, size * j / n, 0.0);
    auto id = [n](int i, int j) { return j * (n + 1) + i; };
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < n; ++i) {
            f.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
            f.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
        }
    return TriangleMesh(v, f);
}

inline Eigen::VectorXd random_vector(Eigen::Index n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = nd(rng);
    return v;
}

inline TangentField random_field(const TriangleMesh& m, std::mt19937_64& rng, double scale = 1.0) {
    return TangentField(m.topology(), random_vector(static_cast<Eigen::Index>(3 * m.num_vertices()), rng, scale));
}

inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    Eigen::Quaterniond q(nd(rng), nd(rng), nd(rng), nd(rng));
    return q.normalized().toRotationMatrix();
}

// Field scaled so its per-vertex RMS magnitude equals `rms`.
inline Eigen::VectorXd with_rms(Eigen::VectorXd v, double rms) {
    const double n = static_cast<double>(v.size() / 3);
    return v * (rms / std::sqrt(v.squaredNorm() / n));
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

inline std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("shapereg_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// Relabels vertices by `perm` (new index of old vertex i is perm[i]).
inline TriangleMesh relabeled(const TriangleMesh& m, const std::vector<int>& perm) {
    std::vector<Eigen::Vector3d> v(m.num_vertices());
    for (std::size_t i = 0; i < m.num_vertices(); ++i) v[static_cast<std::size_t>(perm[i])] = m.vertex(i);
    std::vector<Face> f;
    for (const Face& t : m.faces()) f.push_back({perm[static_cast<std::size_t>(t[0])], perm[static_cast<std::size_t>(t[1])],
                                                 perm[static_cast<std::size_t>(t[2])]});
    return TriangleMesh(v, f);
}

inline Eigen::VectorXd relabel_values(const Eigen::VectorXd& values, const std::vector<int>& perm) {
    Eigen::VectorXd out(values.size());
    for (std::size_t i = 0; i < perm.size(); ++i)
        out.segment<3>(3 * perm[i]) = values.segment<3>(3 * static_cast<Eigen::Index>(i));
    return out;
}

inline std::vector<int> random_permutation(std::size_t n, std::mt19937_64& rng) {
    std::vector<int> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<int>(i);
    std::shuffle(p.begin(), p.end(), rng);
    return p;
}

} // namespace testing
