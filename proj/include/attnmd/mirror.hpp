#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>

#include "attnmd/dataset.hpp"
#include "attnmd/linalg.hpp"

namespace attnmd {

/// The lp potential psi(W) = (1/p) ||W||_{p,p}^p, p > 1. Its gradient acts
/// coordinate-wise, which is what makes the mirror updates separable.
struct Potential {
    double p = 2.0;

    explicit Potential(double p_) : p(p_) { require(p > 1.0, "Potential: requires p > 1"); }
};

namespace detail {

inline double mirror_scalar(double x, double p) {
    if (p == 2.0) return x;
    if (x == 0.0) return 0.0;
    return std::pow(std::fabs(x), p - 1.0) * (x > 0.0 ? 1.0 : -1.0);
}

inline double inverse_mirror_scalar(double x, double p) {
    if (p == 2.0) return x;
    if (x == 0.0) return 0.0;
    return std::pow(std::fabs(x), 1.0 / (p - 1.0)) * (x > 0.0 ? 1.0 : -1.0);
}

/// Per-coordinate Bregman divergence of (1/p)|.|^p; nonnegative by convexity,
/// clamped at zero to absorb last-ulp cancellation.
inline double bregman_scalar(double w, double v, double p) {
    const double term = std::pow(std::fabs(w), p) / p + (p - 1.0) / p * std::pow(std::fabs(v), p) -
                        mirror_scalar(v, p) * w;
    return term > 0.0 ? term : 0.0;
}

}  // namespace detail

/// Entrywise mirror map x -> |x|^(p-1) sign(x); identity at p = 2.
inline Matrix mirror_map(const Potential& pot, const Matrix& m) {
    Matrix out = m;
    for (double& x : out.data) x = detail::mirror_scalar(x, pot.p);
    return out;
}

inline Vector mirror_map(const Potential& pot, const Vector& v) {
    Vector out = v;
    for (double& x : out.data) x = detail::mirror_scalar(x, pot.p);
    return out;
}

/// Entrywise inverse map x -> |x|^(1/(p-1)) sign(x).
inline Matrix inverse_mirror_map(const Potential& pot, const Matrix& m) {
    Matrix out = m;
    for (double& x : out.data) x = detail::inverse_mirror_scalar(x, pot.p);
    return out;
}

inline Vector inverse_mirror_map(const Potential& pot, const Vector& v) {
    Vector out = v;
    for (double& x : out.data) x = detail::inverse_mirror_scalar(x, pot.p);
    return out;
}

/// D_psi(W, V) = psi(W) - psi(V) - <grad psi(V), W - V>, summed per coordinate.
inline double bregman_divergence(const Potential& pot, const Matrix& w, const Matrix& v) {
    require(w.rows == v.rows && w.cols == v.cols, "bregman_divergence: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < w.data.size(); ++i)
        s += detail::bregman_scalar(w.data[i], v.data[i], pot.p);
    return s;
}

inline double bregman_divergence(const Potential& pot, const Vector& w, const Vector& v) {
    require(w.size() == v.size(), "bregman_divergence: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i)
        s += detail::bregman_scalar(w[i], v[i], pot.p);
    return s;
}

/// Bregman divergence between lp,p-normalized arguments; the convergence
/// metric used throughout (reference first, iterate second).
inline double directional_bregman(const Potential& pot, const Matrix& w, const Matrix& v) {
    const double nw = pq_norm(w, pot.p);
    const double nv = pq_norm(v, pot.p);
    if (nw <= 0.0 || nv <= 0.0)
        throw std::domain_error("directional_bregman: zero matrix has no direction");
    return bregman_divergence(pot, (1.0 / nw) * w, (1.0 / nv) * v);
}

inline double directional_bregman(const Potential& pot, const Vector& w, const Vector& v) {
    const double nw = lp_norm(w, pot.p);
    const double nv = lp_norm(v, pot.p);
    if (nw <= 0.0 || nv <= 0.0)
        throw std::domain_error("directional_bregman: zero vector has no direction");
    return bregman_divergence(pot, (1.0 / nw) * w, (1.0 / nv) * v);
}

/// One mirror-descent step on W: push through the mirror map, take the
/// gradient step there, and map back. Coordinate-wise separable; plain
/// gradient descent at p = 2.
inline Matrix lp_attgd_step(const Matrix& w, const Matrix& grad, const Potential& pot, double eta) {
    require(eta > 0.0, "lp_attgd_step: eta must be positive");
    require(w.rows == grad.rows && w.cols == grad.cols, "lp_attgd_step: shape mismatch");
    Matrix out = w;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const double plus = detail::mirror_scalar(out.data[i], pot.p) - eta * grad.data[i];
        out.data[i] = detail::inverse_mirror_scalar(plus, pot.p);
    }
    return out;
}

inline Vector lp_step(const Vector& v, const Vector& grad, const Potential& pot, double eta) {
    require(eta > 0.0, "lp_step: eta must be positive");
    require(v.size() == grad.size(), "lp_step: length mismatch");
    Vector out = v;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double plus = detail::mirror_scalar(out[i], pot.p) - eta * grad[i];
        out[i] = detail::inverse_mirror_scalar(plus, pot.p);
    }
    return out;
}

/// Simultaneous mirror step on both blocks with the same potential.
inline ModelParams lp_jointgd_step(const ModelParams& params, const Matrix& gW, const Vector& gv,
                                   const Potential& pot, double etaW, double etav) {
    ModelParams out;
    out.W = lp_attgd_step(params.W, gW, pot, etaW);
    out.v = lp_step(params.v, gv, pot, etav);
    return out;
}

}  // namespace attnmd
