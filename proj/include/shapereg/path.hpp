#pragma once

#include <vector>

#include "shapereg/mesh.hpp"

namespace shapereg {

// Time-indexed mesh sequence on one triangulation; times increase from 0 to 1.
struct GeodesicPath {
    std::vector<double> times;
    std::vector<TriangleMesh> meshes;

    std::size_t size() const noexcept { return meshes.size(); }

    // Throws InputError / TopologyMismatchError.
    void validate() const;

    static std::vector<double> uniform_times(std::size_t count);
};

} // namespace shapereg
