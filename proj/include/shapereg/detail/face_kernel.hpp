#pragma once

// Per-face formulas of the discrete second-order Sobolev metric, templated on
// the scalar type of the vertex positions so the same code runs on doubles
// and on forward-mode dual numbers (position gradients).
//
// For a face with vertices x0, x1, x2 and edges e1 = x1 - x0, e2 = x2 - x0:
//   t1 = e1/|e1|, t2 = (e2 - (e2.t1) t1)/|...|, n = t1 x t2
//   dh = [h1-h0, h2-h0] E^-1 = sum_v h_v g_v^T      (E = frame coords of e1, e2)
// The tangential part A = [t1 t2]^T dh (2x2) splits into trace, traceless
// symmetric and skew parts; the normal part is n^T dh (1x2).

#include <array>
#include <cmath>

#include <Eigen/Dense>

#include "shapereg/coefficients.hpp"

namespace shapereg::detail {

template <class T>
using Vec3 = Eigen::Matrix<T, 3, 1>;
template <class T>
using Vec2 = Eigen::Matrix<T, 2, 1>;

using std::sqrt;

template <class T>
struct FaceGeometry {
    T area;
    Vec3<T> t1, t2, n;
    std::array<Vec2<T>, 3> grad;     // frame gradient of each hat function
    std::array<T, 3> half_cot;       // (1/2) cot of the angle at each corner
};

template <class T>
FaceGeometry<T> face_geometry(const Vec3<T>& x0, const Vec3<T>& x1, const Vec3<T>& x2) {
    FaceGeometry<T> g;
    const Vec3<T> e1 = x1 - x0;
    const Vec3<T> e2 = x2 - x0;
    const T l1 = sqrt(e1.squaredNorm());
    g.t1 = e1 / l1;
    const T c = e2.dot(g.t1);
    const Vec3<T> w = e2 - c * g.t1;
    const T lw = sqrt(w.squaredNorm());
    g.t2 = w / lw;
    g.n = g.t1.cross(g.t2);
    g.area = T(0.5) * l1 * lw;

    g.grad[1] = Vec2<T>(T(1) / l1, -c / (l1 * lw));
    g.grad[2] = Vec2<T>(T(0), T(1) / lw);
    g.grad[0] = -(g.grad[1] + g.grad[2]);

    const T inv_twice_area = T(1) / (T(2) * g.area);
    const Vec3<T> e12 = x2 - x1;
    g.half_cot[0] = T(0.5) * e1.dot(e2) * inv_twice_area;
    g.half_cot[1] = T(0.5) * (-e1).dot(e12) * inv_twice_area;
    g.half_cot[2] = T(0.5) * (-e2).dot(-e12) * inv_twice_area;
    return g;
}

// Reduced quantities of dh for one field on one face.
template <class T>
struct FaceDifferentialParts {
    Eigen::Matrix<T, 2, 2> tangential;  // A = [t1 t2]^T dh
    Vec2<T> normal;                      // n^T dh
};

template <class T, class F>
FaceDifferentialParts<T> differential_parts(const FaceGeometry<T>& g, const std::array<F, 3>& h) {
    FaceDifferentialParts<T> p;
    p.tangential.setZero();
    p.normal.setZero();
    for (int v = 0; v < 3; ++v) {
        const T a1 = g.t1.dot(h[v].template cast<T>());
        const T a2 = g.t2.dot(h[v].template cast<T>());
        const T an = g.n.dot(h[v].template cast<T>());
        p.tangential.row(0) += a1 * g.grad[v].transpose();
        p.tangential.row(1) += a2 * g.grad[v].transpose();
        p.normal += an * g.grad[v];
    }
    return p;
}

// Face contribution of a0, a1, b1, c1, d1 terms to G(h, k); a2 is handled per
// vertex since it couples Laplacian stencils.
template <class T, class F>
T face_bilinear(const FaceGeometry<T>& g, const MetricCoefficients& w, const std::array<F, 3>& h, const std::array<F, 3>& k) {
    const auto ph = differential_parts(g, h);
    const auto pk = differential_parts(g, k);
    const T full = (ph.tangential.array() * pk.tangential.array()).sum();
    const T tr_h = ph.tangential.trace(), tr_k = pk.tangential.trace();
    const T sk_h = ph.tangential(1, 0) - ph.tangential(0, 1);
    const T sk_k = pk.tangential(1, 0) - pk.tangential(0, 1);
    const T scale = T(0.5) * tr_h * tr_k;
    const T skew = T(0.5) * sk_h * sk_k;
    const T shear = full - scale - skew;
    const T bend = ph.normal.dot(pk.normal);
    T pointwise = T(0);
    for (int v = 0; v < 3; ++v) pointwise += h[v].template cast<T>().dot(k[v].template cast<T>());
    return g.area * (T(w.a1) * shear + T(w.b1) * scale + T(w.c1) * bend + T(w.d1) * skew) +
           T(w.a0) * g.area / T(3) * pointwise;
}

// (L_f h)_v for the local cotangent stiffness matrix of one face.
template <class T, class F>
std::array<Vec3<T>, 3> face_laplacian_apply(const FaceGeometry<T>& g, const std::array<F, 3>& h) {
    std::array<Vec3<T>, 3> out;
    for (int v = 0; v < 3; ++v) {
        const int a = (v + 1) % 3, b = (v + 2) % 3;
        // edge (v,a) is opposite corner b; edge (v,b) is opposite corner a
        out[v] = g.half_cot[b] * (h[v] - h[a]).template cast<T>() + g.half_cot[a] * (h[v] - h[b]).template cast<T>();
    }
    return out;
}

// Per-face surrogate whose position gradient equals this face's share of the
// gradient of sum_v <(L h)_v, (L k)_v> / A_v, with u_h = (L h)/A and u_k
// evaluated at the current geometry and held fixed.
template <class T, class F>
T face_laplacian_surrogate(const FaceGeometry<T>& g, const std::array<F, 3>& h, const std::array<F, 3>& k,
                           const std::array<F, 3>& u_h, const std::array<F, 3>& u_k) {
    const auto lh = face_laplacian_apply(g, h);
    const auto lk = face_laplacian_apply(g, k);
    T value = T(0);
    T uu = T(0);
    for (int v = 0; v < 3; ++v) {
        value += u_h[v].template cast<T>().dot(lk[v]) + u_k[v].template cast<T>().dot(lh[v]);
        uu += u_h[v].template cast<T>().dot(u_k[v].template cast<T>());
    }
    return value - uu * g.area / T(3);
}

} // namespace shapereg::detail
