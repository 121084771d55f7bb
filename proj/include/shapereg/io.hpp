#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "shapereg/mesh.hpp"

namespace shapereg {

// ASCII PLY with float64 vertex properties written at full round-trip
// precision, so write -> read -> write is byte-stable.
void write_ply(std::ostream& os, const TriangleMesh& mesh, const std::string& comment = {});
void write_ply(const std::filesystem::path& path, const TriangleMesh& mesh, const std::string& comment = {});

// The base mesh's vertices and faces plus per-vertex dx, dy, dz.
void write_field_ply(std::ostream& os, const TriangleMesh& base, const TangentField& field,
                     const std::string& comment = {});
void write_field_ply(const std::filesystem::path& path, const TriangleMesh& base, const TangentField& field,
                     const std::string& comment = {});

struct PlyContents {
    TriangleMesh mesh;
    std::optional<TangentField> field;  // present when dx, dy, dz are
};

// ASCII PLY, triangles only; extra vertex properties are ignored. Throws
// InputError on malformed or unsupported input.
PlyContents read_ply(std::istream& is);
PlyContents read_ply(const std::filesystem::path& path);

// OFF import (triangles only).
TriangleMesh read_off(std::istream& is);
TriangleMesh read_off(const std::filesystem::path& path);

// Dispatches on the extension (.ply or .off). When `shared` describes the
// same triangulation, the result reuses it.
TriangleMesh read_mesh(const std::filesystem::path& path, const TopologyPtr& shared = nullptr);

} // namespace shapereg
