#include "shapereg/detail/metric_engine.hpp"

#include <algorithm>

#include <Eigen/OrderingMethods>
#include <unsupported/Eigen/AutoDiff>

namespace shapereg {

const detail::MetricPattern& Topology::metric_pattern() const {
    std::call_once(pattern_once_, [this] { pattern_ = std::make_shared<const detail::MetricPattern>(*this); });
    return *pattern_;
}

namespace detail {

MetricPattern::MetricPattern(const Topology& topo) : num_vertices(topo.num_vertices()) {
    const std::size_t n = num_vertices;

    ring_offset.assign(n + 1, 0);
    for (std::size_t v = 0; v < n; ++v) ring_offset[v + 1] = ring_offset[v] + 1 + topo.neighbors(v).size();
    ring.reserve(ring_offset.back());
    for (std::size_t v = 0; v < n; ++v) {
        ring.push_back(static_cast<int>(v));
        for (int w : topo.neighbors(v)) ring.push_back(w);
    }

    // Vertex pairs coupled by some closed one-ring (covers face pairs too).
    std::vector<std::vector<int>> adj(n);
    for (std::size_t v = 0; v < n; ++v) {
        const auto* r = ring.data() + ring_offset[v];
        const std::size_t len = ring_offset[v + 1] - ring_offset[v];
        for (std::size_t p = 0; p < len; ++p)
            for (std::size_t q = 0; q < len; ++q) adj[static_cast<std::size_t>(r[p])].push_back(r[q]);
    }
    for (std::size_t v = 0; v < n; ++v) {
        adj[v].push_back(static_cast<int>(v));
        std::sort(adj[v].begin(), adj[v].end());
        adj[v].erase(std::unique(adj[v].begin(), adj[v].end()), adj[v].end());
    }

    perm.resize(n);
    inv_perm.resize(n);
    if (n > 0) {
        std::vector<Eigen::Triplet<double>> trip;
        for (std::size_t v = 0; v < n; ++v)
            for (int w : adj[v]) trip.emplace_back(static_cast<int>(v), w, 1.0);
        Eigen::SparseMatrix<double> graph(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
        graph.setFromTriplets(trip.begin(), trip.end());
        Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> pinv;
        Eigen::AMDOrdering<int> amd;
        amd(graph, pinv);
        const Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> p = pinv.inverse();
        for (std::size_t v = 0; v < n; ++v) {
            perm[v] = p.indices()[static_cast<Eigen::Index>(v)];
            inv_perm[static_cast<std::size_t>(perm[v])] = static_cast<int>(v);
        }
    }

    // Block CSC in permuted numbering.
    std::vector<std::vector<int>> rows(n);
    for (std::size_t j = 0; j < n; ++j) {
        auto& r = rows[static_cast<std::size_t>(perm[j])];
        for (int i : adj[j]) r.push_back(perm[static_cast<std::size_t>(i)]);
        std::sort(r.begin(), r.end());
    }
    outer.assign(3 * n + 1, 0);
    std::vector<int> col_base(n);
    int nnz = 0;
    for (std::size_t jp = 0; jp < n; ++jp) {
        col_base[jp] = nnz;
        const int len = static_cast<int>(rows[jp].size());
        for (int e = 0; e < 3; ++e) {
            outer[3 * jp + static_cast<std::size_t>(e)] = nnz + e * 3 * len;
        }
        for (int e = 0; e < 3; ++e)
            for (int ip : rows[jp])
                for (int d = 0; d < 3; ++d) inner.push_back(3 * ip + d);
        nnz += 9 * len;
    }
    outer[3 * n] = nnz;

    auto slot = [&](int i, int j) {
        const std::size_t jp = static_cast<std::size_t>(perm[static_cast<std::size_t>(j)]);
        const int ip = perm[static_cast<std::size_t>(i)];
        const auto& r = rows[jp];
        const auto it = std::lower_bound(r.begin(), r.end(), ip);
        const int pos = static_cast<int>(it - r.begin());
        return BlockSlot{col_base[jp] + 3 * pos, 3 * static_cast<int>(r.size())};
    };

    face_slots.resize(topo.num_faces());
    face_ring_pos.resize(topo.num_faces());
    for (std::size_t f = 0; f < topo.num_faces(); ++f) {
        const Face& t = topo.face(f);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) face_slots[f][static_cast<std::size_t>(3 * a + b)] = slot(t[a], t[b]);
        for (int c = 0; c < 3; ++c) {
            const auto* r = ring.data() + ring_offset[static_cast<std::size_t>(t[c])];
            const std::size_t len = ring_offset[static_cast<std::size_t>(t[c]) + 1] - ring_offset[static_cast<std::size_t>(t[c])];
            for (int d = 0; d < 3; ++d) {
                const auto it = std::find(r, r + len, t[d]);
                face_ring_pos[f][static_cast<std::size_t>(c)][static_cast<std::size_t>(d)] = static_cast<int>(it - r);
            }
        }
    }

    ring_pair_offset.assign(n + 1, 0);
    for (std::size_t v = 0; v < n; ++v) {
        const std::size_t len = ring_offset[v + 1] - ring_offset[v];
        ring_pair_offset[v + 1] = ring_pair_offset[v] + len * len;
    }
    ring_pair_slots.reserve(ring_pair_offset.back());
    for (std::size_t v = 0; v < n; ++v) {
        const auto* r = ring.data() + ring_offset[v];
        const std::size_t len = ring_offset[v + 1] - ring_offset[v];
        for (std::size_t p = 0; p < len; ++p)
            for (std::size_t q = 0; q < len; ++q) ring_pair_slots.push_back(slot(r[p], r[q]));
    }
}

Eigen::SparseMatrix<double> MetricPattern::empty_matrix() const {
    const auto dim = static_cast<Eigen::Index>(3 * num_vertices);
    Eigen::SparseMatrix<double> m(dim, dim);
    m.resizeNonZeros(outer.back());
    std::copy(outer.begin(), outer.end(), m.outerIndexPtr());
    std::copy(inner.begin(), inner.end(), m.innerIndexPtr());
    std::fill(m.valuePtr(), m.valuePtr() + outer.back(), 0.0);
    return m;
}

namespace {

using Vec9 = Eigen::Matrix<double, 9, 1>;
using AD = Eigen::AutoDiffScalar<Vec9>;

// d/dh of face_bilinear(g, h, k): the face's contribution to G k.
std::array<Eigen::Vector3d, 3> face_apply(const FaceGeometry<double>& g, const MetricCoefficients& c,
                                          const std::array<Eigen::Vector3d, 3>& k) {
    const auto pk = differential_parts(g, k);
    const double tr = pk.tangential.trace();
    const double sk = pk.tangential(1, 0) - pk.tangential(0, 1);
    Eigen::Matrix2d skew_unit;
    skew_unit << 0.0, -1.0, 1.0, 0.0;
    const Eigen::Matrix2d dt = g.area * (c.a1 * pk.tangential + 0.5 * (c.b1 - c.a1) * tr * Eigen::Matrix2d::Identity() +
                                         0.5 * (c.d1 - c.a1) * sk * skew_unit);
    const Eigen::Vector2d dn = g.area * c.c1 * pk.normal;
    std::array<Eigen::Vector3d, 3> out;
    for (int w = 0; w < 3; ++w) {
        out[w] = g.t1 * dt.row(0).dot(g.grad[w]) + g.t2 * dt.row(1).dot(g.grad[w]) + g.n * dn.dot(g.grad[w]) +
                 (c.a0 * g.area / 3.0) * k[w];
    }
    return out;
}

template <class T>
T face_objective(const FaceGeometry<T>& g, const MetricCoefficients& c, const std::array<Eigen::Vector3d, 3>& a,
                 const std::array<Eigen::Vector3d, 3>& b, const std::array<Eigen::Vector3d, 3>& ua,
                 const std::array<Eigen::Vector3d, 3>& ub) {
    T value = face_bilinear(g, c, a, b);
    if (c.a2 != 0.0) value += T(c.a2) * face_laplacian_surrogate(g, a, b, ua, ub);
    return value;
}

} // namespace

MetricEngine::MetricEngine(TopologyPtr topology, const MetricCoefficients& coeffs, Execution exec)
    : topology_(std::move(topology)), coeffs_(coeffs), exec_(exec), pattern_(&topology_->metric_pattern()) {
    coeffs_.validate();
}

FaceState MetricEngine::face_state(const Eigen::VectorXd& x) const {
    const Topology& topo = *topology_;
    const std::size_t nf = topo.num_faces();
    if (static_cast<std::size_t>(x.size()) != 3 * topo.num_vertices())
        throw SizeMismatchError("configuration size does not match topology");
    FaceState s;
    s.geometry.resize(nf);
    std::vector<double> raw_area(nf);
    for_each_index(exec_, nf, [&](std::size_t f) {
        const Face& t = topo.face(f);
        const Eigen::Vector3d x0 = x.segment<3>(3 * t[0]);
        const Eigen::Vector3d e1 = x.segment<3>(3 * t[1]) - x0;
        const Eigen::Vector3d e2 = x.segment<3>(3 * t[2]) - x0;
        raw_area[f] = 0.5 * e1.cross(e2).norm();
        if (raw_area[f] > kMinFaceArea)
            s.geometry[f] = face_geometry<double>(x0, x.segment<3>(3 * t[1]), x.segment<3>(3 * t[2]));
    });
    for (std::size_t f = 0; f < nf; ++f) {
        if (!std::isfinite(raw_area[f])) throw NonFiniteError("non-finite vertex coordinates");
        if (!(raw_area[f] > kMinFaceArea)) throw DegenerateMeshError(f, raw_area[f]);
    }
    s.vertex_areas = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(topo.num_vertices()));
    for (std::size_t f = 0; f < nf; ++f)
        for (int v : topo.face(f)) s.vertex_areas[v] += s.geometry[f].area / 3.0;
    return s;
}

Eigen::Matrix<double, 9, 9> MetricEngine::face_block(const FaceGeometry<double>& g) const {
    Eigen::Matrix<double, 9, 9> block;
    for (int col = 0; col < 9; ++col) {
        std::array<Eigen::Vector3d, 3> basis{Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero()};
        basis[col / 3][col % 3] = 1.0;
        const auto out = face_apply(g, coeffs_, basis);
        for (int w = 0; w < 3; ++w) block.block<3, 1>(3 * w, col) = out[w];
    }
    return block;
}

Eigen::VectorXd MetricEngine::gather(const std::vector<Vec9>& per_face) const {
    const Topology& topo = *topology_;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(3 * topo.num_vertices()));
    for_each_index(exec_, topo.num_vertices(), [&](std::size_t v) {
        Eigen::Vector3d acc = Eigen::Vector3d::Zero();
        for (int f : topo.incident_faces(v)) {
            const Face& t = topo.face(static_cast<std::size_t>(f));
            const int c = t[0] == static_cast<int>(v) ? 0 : (t[1] == static_cast<int>(v) ? 1 : 2);
            acc += per_face[static_cast<std::size_t>(f)].segment<3>(3 * c);
        }
        out.segment<3>(3 * static_cast<Eigen::Index>(v)) = acc;
    });
    return out;
}

Eigen::VectorXd MetricEngine::laplacian_apply(const FaceState& state, const Eigen::VectorXd& a) const {
    const Topology& topo = *topology_;
    std::vector<Vec9> buf(topo.num_faces());
    for_each_index(exec_, topo.num_faces(), [&](std::size_t f) {
        const auto la = face_laplacian_apply(state.geometry[f], gather_face(a, topo.face(f)));
        for (int c = 0; c < 3; ++c) buf[f].segment<3>(3 * c) = la[c];
    });
    return gather(buf);
}

Eigen::VectorXd MetricEngine::laplacian_over_area(const FaceState& state, const Eigen::VectorXd& a) const {
    Eigen::VectorXd s = laplacian_apply(state, a);
    for (Eigen::Index v = 0; v < state.vertex_areas.size(); ++v) s.segment<3>(3 * v) /= state.vertex_areas[v];
    return s;
}

void MetricEngine::assemble(const Eigen::VectorXd& x, Eigen::SparseMatrix<double>& matrix) const {
    assemble(face_state(x), matrix);
}

void MetricEngine::assemble(const FaceState& state, Eigen::SparseMatrix<double>& matrix) const {
    const Topology& topo = *topology_;
    const MetricPattern& pat = *pattern_;
    const std::size_t nf = topo.num_faces();
    double* values = matrix.valuePtr();
    std::fill(values, values + pat.outer.back(), 0.0);

    std::vector<Eigen::Matrix<double, 9, 9>> blocks(nf);
    for_each_index(exec_, nf, [&](std::size_t f) { blocks[f] = face_block(state.geometry[f]); });
    for (std::size_t f = 0; f < nf; ++f) {
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) {
                const BlockSlot s = pat.face_slots[f][static_cast<std::size_t>(3 * a + b)];
                for (int e = 0; e < 3; ++e)
                    for (int d = 0; d < 3; ++d) values[s.base + e * s.stride + d] += blocks[f](3 * a + d, 3 * b + e);
            }
    }

    if (coeffs_.a2 == 0.0) return;
    // Rows of the cotangent stiffness matrix restricted to closed one-rings.
    std::vector<double> lrow(pat.ring.size(), 0.0);
    for (std::size_t f = 0; f < nf; ++f) {
        const Face& t = topo.face(f);
        const auto& hc = state.geometry[f].half_cot;
        for (int c = 0; c < 3; ++c) {
            const std::size_t base = pat.ring_offset[static_cast<std::size_t>(t[c])];
            for (int d = 0; d < 3; ++d) {
                if (d == c) continue;
                const int third = 3 - c - d;
                lrow[base] += hc[third];
                lrow[base + static_cast<std::size_t>(pat.face_ring_pos[f][c][d])] -= hc[third];
            }
        }
    }
    for (std::size_t v = 0; v < topo.num_vertices(); ++v) {
        const std::size_t base = pat.ring_offset[v];
        const std::size_t len = pat.ring_offset[v + 1] - base;
        const double scale = coeffs_.a2 / state.vertex_areas[static_cast<Eigen::Index>(v)];
        const BlockSlot* slots = pat.ring_pair_slots.data() + pat.ring_pair_offset[v];
        for (std::size_t p = 0; p < len; ++p)
            for (std::size_t q = 0; q < len; ++q) {
                const double w = scale * lrow[base + p] * lrow[base + q];
                const BlockSlot s = slots[p * len + q];
                for (int d = 0; d < 3; ++d) values[s.base + d * s.stride + d] += w;
            }
    }
}

Eigen::VectorXd MetricEngine::apply(const Eigen::VectorXd& x, const Eigen::VectorXd& v) const {
    return apply(face_state(x), v);
}

Eigen::VectorXd MetricEngine::apply(const FaceState& state, const Eigen::VectorXd& v) const {
    const Topology& topo = *topology_;
    std::vector<Vec9> buf(topo.num_faces());
    for_each_index(exec_, topo.num_faces(), [&](std::size_t f) {
        const auto out = face_apply(state.geometry[f], coeffs_, gather_face(v, topo.face(f)));
        for (int c = 0; c < 3; ++c) buf[f].segment<3>(3 * c) = out[c];
    });
    Eigen::VectorXd result = gather(buf);
    if (coeffs_.a2 != 0.0) result += coeffs_.a2 * laplacian_apply(state, laplacian_over_area(state, v));
    return result;
}

double MetricEngine::bilinear(const Eigen::VectorXd& x, const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    const FaceState state = face_state(x);
    const Topology& topo = *topology_;
    std::vector<double> per_face(topo.num_faces());
    for_each_index(exec_, topo.num_faces(), [&](std::size_t f) {
        const Face& t = topo.face(f);
        per_face[f] = face_bilinear(state.geometry[f], coeffs_, gather_face(a, t), gather_face(b, t));
    });
    double total = 0.0;
    for (double e : per_face) total += e;
    if (coeffs_.a2 != 0.0) {
        const Eigen::VectorXd la = laplacian_apply(state, a);
        const Eigen::VectorXd lb = laplacian_apply(state, b);
        double lap = 0.0;
        for (Eigen::Index v = 0; v < state.vertex_areas.size(); ++v)
            lap += la.segment<3>(3 * v).dot(lb.segment<3>(3 * v)) / state.vertex_areas[v];
        total += coeffs_.a2 * lap;
    }
    return total;
}

Eigen::VectorXd MetricEngine::bilinear_gradient(const Eigen::VectorXd& x, const Eigen::VectorXd& a,
                                                const Eigen::VectorXd& b, DerivativeBackend backend,
                                                double fd_step) const {
    const FaceState state = face_state(x);
    const Topology& topo = *topology_;
    Eigen::VectorXd ua, ub;
    if (coeffs_.a2 != 0.0) {
        ua = laplacian_over_area(state, a);
        ub = laplacian_over_area(state, b);
    } else {
        ua = Eigen::VectorXd::Zero(a.size());
        ub = ua;
    }

    std::vector<Vec9> buf(topo.num_faces());
    for_each_index(exec_, topo.num_faces(), [&](std::size_t f) {
        const Face& t = topo.face(f);
        const auto af = gather_face(a, t), bf = gather_face(b, t);
        const auto uaf = gather_face(ua, t), ubf = gather_face(ub, t);
        if (backend == DerivativeBackend::automatic) {
            std::array<Vec3<AD>, 3> xs;
            for (int c = 0; c < 3; ++c)
                for (int d = 0; d < 3; ++d) xs[c][d] = AD(x[3 * t[c] + d], 9, 3 * c + d);
            const auto g = face_geometry<AD>(xs[0], xs[1], xs[2]);
            buf[f] = face_objective(g, coeffs_, af, bf, uaf, ubf).derivatives();
        } else {
            std::array<Eigen::Vector3d, 3> xs = gather_face(x, t);
            for (int k = 0; k < 9; ++k) {
                const double keep = xs[k / 3][k % 3];
                xs[k / 3][k % 3] = keep + fd_step;
                const double up = face_objective(face_geometry<double>(xs[0], xs[1], xs[2]), coeffs_, af, bf, uaf, ubf);
                xs[k / 3][k % 3] = keep - fd_step;
                const double down = face_objective(face_geometry<double>(xs[0], xs[1], xs[2]), coeffs_, af, bf, uaf, ubf);
                xs[k / 3][k % 3] = keep;
                buf[f][k] = (up - down) / (2.0 * fd_step);
            }
        }
    });
    return gather(buf);
}

Eigen::VectorXd MetricEngine::to_permuted(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out(v.size());
    const auto& perm = pattern_->perm;
    for (std::size_t i = 0; i < perm.size(); ++i) out.segment<3>(3 * perm[i]) = v.segment<3>(3 * static_cast<Eigen::Index>(i));
    return out;
}

Eigen::VectorXd MetricEngine::from_permuted(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out(v.size());
    const auto& perm = pattern_->perm;
    for (std::size_t i = 0; i < perm.size(); ++i) out.segment<3>(3 * static_cast<Eigen::Index>(i)) = v.segment<3>(3 * perm[i]);
    return out;
}

} // namespace detail
} // namespace shapereg
