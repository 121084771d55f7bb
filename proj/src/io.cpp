#include "shapereg/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace shapereg {

namespace {

void write_header(std::ostream& os, std::size_t n, std::size_t f, const std::string& comment, bool with_field) {
    os << "ply\nformat ascii 1.0\n";
    if (!comment.empty()) {
        std::istringstream lines(comment);
        std::string line;
        while (std::getline(lines, line)) os << "comment " << line << '\n';
    }
    os << "element vertex " << n << "\nproperty double x\nproperty double y\nproperty double z\n";
    if (with_field) os << "property double dx\nproperty double dy\nproperty double dz\n";
    os << "element face " << f << "\nproperty list uchar int vertex_indices\nend_header\n";
}

void write_body(std::ostream& os, const TriangleMesh& mesh, const TangentField* field) {
    char buf[160];
    for (std::size_t i = 0; i < mesh.num_vertices(); ++i) {
        const Eigen::Vector3d p = mesh.vertex(i);
        int len = std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g", p.x(), p.y(), p.z());
        os.write(buf, len);
        if (field) {
            const Eigen::Vector3d d = field->at(i);
            len = std::snprintf(buf, sizeof buf, " %.17g %.17g %.17g", d.x(), d.y(), d.z());
            os.write(buf, len);
        }
        os << '\n';
    }
    for (const Face& t : mesh.faces()) os << "3 " << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InputError("cannot write " + path.string());
    return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("cannot read " + path.string());
    return is;
}

// Whitespace tokenizer over the body that tracks line numbers for messages.
class Tokens {
public:
    // With `comment` set, a token starting with it discards the rest of its line.
    explicit Tokens(std::istream& is, char comment = '\0') : is_(is), comment_(comment) {}

    std::string next(const char* what) {
        std::string tok;
        while (true) {
            if (!(is_ >> tok)) throw InputError(std::string("unexpected end of file while reading ") + what);
            if (!comment_ || tok.front() != comment_) return tok;
            std::string rest;
            std::getline(is_, rest);
        }
    }
    double number(const char* what) {
        const std::string tok = next(what);
        double value = 0.0;
        const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), value);
        if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
            throw InputError(std::string("bad number '") + tok + "' in " + what);
        return value;
    }
    long long integer(const char* what) {
        const std::string tok = next(what);
        long long value = 0;
        const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), value);
        if (res.ec != std::errc() || res.ptr != tok.data() + tok.size())
            throw InputError(std::string("bad integer '") + tok + "' in " + what);
        return value;
    }

private:
    std::istream& is_;
    char comment_;
};

struct PlyProperty {
    std::string name;
    bool is_list = false;
};

struct PlyElement {
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> properties;
};

int index_of(const PlyElement& e, const std::string& name) {
    for (std::size_t i = 0; i < e.properties.size(); ++i)
        if (e.properties[i].name == name) return static_cast<int>(i);
    return -1;
}

Face read_triangle(Tokens& tok, std::size_t f) {
    const long long k = tok.integer("face");
    if (k != 3) throw InputError("face " + std::to_string(f) + " has " + std::to_string(k) + " vertices; only triangles are supported");
    Face t{};
    for (int c = 0; c < 3; ++c) {
        const long long idx = tok.integer("face");
        if (idx < 0 || idx > std::numeric_limits<int>::max()) throw InputError("face index out of range");
        t[static_cast<std::size_t>(c)] = static_cast<int>(idx);
    }
    return t;
}

} // namespace

void write_ply(std::ostream& os, const TriangleMesh& mesh, const std::string& comment) {
    write_header(os, mesh.num_vertices(), mesh.num_faces(), comment, false);
    write_body(os, mesh, nullptr);
}

void write_ply(const std::filesystem::path& path, const TriangleMesh& mesh, const std::string& comment) {
    auto os = open_out(path);
    write_ply(os, mesh, comment);
    if (!os) throw InputError("failed writing " + path.string());
}

void write_field_ply(std::ostream& os, const TriangleMesh& base, const TangentField& field,
                     const std::string& comment) {
    require_field_on(base, field);
    write_header(os, base.num_vertices(), base.num_faces(), comment, true);
    write_body(os, base, &field);
}

void write_field_ply(const std::filesystem::path& path, const TriangleMesh& base, const TangentField& field,
                     const std::string& comment) {
    auto os = open_out(path);
    write_field_ply(os, base, field, comment);
    if (!os) throw InputError("failed writing " + path.string());
}

PlyContents read_ply(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || (line != "ply" && line != "ply\r")) throw InputError("not a PLY file");
    std::vector<PlyElement> elements;
    bool ascii = false, ended = false;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word.empty() || word == "comment" || word == "obj_info") continue;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "ascii") throw InputError("only ASCII PLY is supported (got " + fmt + ")");
            ascii = true;
        } else if (word == "element") {
            PlyElement e;
            long long count = -1;
            ls >> e.name >> count;
            if (!ls || count < 0) throw InputError("bad element line: " + line);
            e.count = static_cast<std::size_t>(count);
            elements.push_back(std::move(e));
        } else if (word == "property") {
            if (elements.empty()) throw InputError("property before any element");
            PlyProperty p;
            std::string type;
            ls >> type;
            if (type == "list") {
                std::string count_type, item_type;
                ls >> count_type >> item_type;
                p.is_list = true;
            }
            ls >> p.name;
            if (!ls) throw InputError("bad property line: " + line);
            elements.back().properties.push_back(std::move(p));
        } else if (word == "end_header") {
            ended = true;
            break;
        } else {
            throw InputError("unknown PLY header keyword '" + word + "'");
        }
    }
    if (!ascii || !ended) throw InputError("incomplete PLY header");

    Tokens tok(is);
    std::vector<Eigen::Vector3d> vertices;
    std::vector<Eigen::Vector3d> displacements;
    std::vector<Face> faces;
    bool have_vertices = false, have_faces = false, have_field = false;
    for (const PlyElement& e : elements) {
        if (e.name == "vertex") {
            const int ix = index_of(e, "x"), iy = index_of(e, "y"), iz = index_of(e, "z");
            if (ix < 0 || iy < 0 || iz < 0) throw InputError("vertex element lacks x, y or z");
            const int jx = index_of(e, "dx"), jy = index_of(e, "dy"), jz = index_of(e, "dz");
            have_field = jx >= 0 && jy >= 0 && jz >= 0;
            std::vector<double> row(e.properties.size());
            vertices.reserve(e.count);
            for (std::size_t v = 0; v < e.count; ++v) {
                for (std::size_t k = 0; k < e.properties.size(); ++k) {
                    if (e.properties[k].is_list) throw InputError("list properties on vertices are not supported");
                    row[k] = tok.number("vertex");
                }
                vertices.emplace_back(row[static_cast<std::size_t>(ix)], row[static_cast<std::size_t>(iy)],
                                      row[static_cast<std::size_t>(iz)]);
                if (have_field)
                    displacements.emplace_back(row[static_cast<std::size_t>(jx)], row[static_cast<std::size_t>(jy)],
                                               row[static_cast<std::size_t>(jz)]);
            }
            have_vertices = true;
        } else if (e.name == "face") {
            int list = index_of(e, "vertex_indices");
            if (list < 0) list = index_of(e, "vertex_index");
            if (list < 0 || !e.properties[static_cast<std::size_t>(list)].is_list)
                throw InputError("face element lacks a vertex_indices list");
            faces.reserve(e.count);
            for (std::size_t f = 0; f < e.count; ++f) {
                for (std::size_t k = 0; k < e.properties.size(); ++k) {
                    if (static_cast<int>(k) == list) {
                        faces.push_back(read_triangle(tok, f));
                    } else if (e.properties[k].is_list) {
                        const long long m = tok.integer("face");
                        for (long long j = 0; j < m; ++j) tok.next("face");
                    } else {
                        tok.next("face");
                    }
                }
            }
            have_faces = true;
        } else {
            // skip unknown elements
            for (std::size_t r = 0; r < e.count; ++r)
                for (const auto& p : e.properties) {
                    if (p.is_list) {
                        const long long m = tok.integer(e.name.c_str());
                        for (long long j = 0; j < m; ++j) tok.next(e.name.c_str());
                    } else {
                        tok.next(e.name.c_str());
                    }
                }
        }
    }
    if (!have_vertices || !have_faces) throw InputError("PLY needs vertex and face elements");
    for (const auto& p : vertices)
        if (!p.allFinite()) throw InputError("non-finite vertex coordinate");

    PlyContents out{TriangleMesh(vertices, std::move(faces)), std::nullopt};
    if (have_field) {
        Eigen::VectorXd values(3 * static_cast<Eigen::Index>(displacements.size()));
        for (std::size_t v = 0; v < displacements.size(); ++v)
            values.segment<3>(3 * static_cast<Eigen::Index>(v)) = displacements[v];
        out.field = TangentField(out.mesh.topology(), std::move(values));
    }
    return out;
}

PlyContents read_ply(const std::filesystem::path& path) {
    auto is = open_in(path);
    try {
        return read_ply(is);
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

TriangleMesh read_off(std::istream& is) {
    Tokens tok(is, '#');
    const std::string magic = tok.next("OFF header");
    if (magic != "OFF") throw InputError("not an OFF file");
    const long long n = tok.integer("OFF counts"), f = tok.integer("OFF counts");
    tok.integer("OFF counts");  // edges, unused
    if (n < 0 || f < 0) throw InputError("negative OFF counts");
    std::vector<Eigen::Vector3d> vertices(static_cast<std::size_t>(n));
    for (auto& p : vertices) {
        p.x() = tok.number("vertex");
        p.y() = tok.number("vertex");
        p.z() = tok.number("vertex");
    }
    std::vector<Face> faces;
    faces.reserve(static_cast<std::size_t>(f));
    for (long long k = 0; k < f; ++k) faces.push_back(read_triangle(tok, static_cast<std::size_t>(k)));
    return TriangleMesh(vertices, std::move(faces));
}

TriangleMesh read_off(const std::filesystem::path& path) {
    auto is = open_in(path);
    try {
        return read_off(is);
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

TriangleMesh read_mesh(const std::filesystem::path& path, const TopologyPtr& shared) {
    const std::string ext = path.extension().string();
    TriangleMesh mesh;
    if (ext == ".ply" || ext == ".PLY")
        mesh = read_ply(path).mesh;
    else if (ext == ".off" || ext == ".OFF")
        mesh = read_off(path);
    else
        throw InputError("unsupported mesh format: " + path.string());
    if (shared && shared->same_as(*mesh.topology())) return TriangleMesh(shared, mesh.coords());
    return mesh;
}

} // namespace shapereg
