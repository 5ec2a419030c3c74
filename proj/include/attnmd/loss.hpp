#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "attnmd/attention.hpp"
#include "attnmd/dataset.hpp"
#include "attnmd/linalg.hpp"

namespace attnmd {

enum class LossKind {
    Exponential,  // l(x) = exp(-x)
    Logistic      // l(x) = log(1 + exp(-x))
};

inline std::string to_string(LossKind k) {
    return k == LossKind::Exponential ? "exp" : "logistic";
}

/// l(x). The logistic branch goes through log1p on the stable side; margins
/// exceed 50 late in training and exp(-x) alone would not be the issue, but
/// exp(x) for x < 0 paths must not overflow either.
inline double loss_value(LossKind k, double x) {
    if (k == LossKind::Exponential) return std::exp(-x);
    return x >= 0.0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
}

/// l'(x); strictly negative everywhere for both losses.
inline double loss_deriv(LossKind k, double x) {
    if (k == LossKind::Exponential) return -std::exp(-x);
    return x >= 0.0 ? -std::exp(-x) / (1.0 + std::exp(-x)) : -1.0 / (1.0 + std::exp(x));
}

/// ERM objective (1/n) sum_i l(y_i f(X_i, z_i)).
inline double erm_objective(const ModelParams& params, const AttnDataset& ds, LossKind loss) {
    double total = 0.0;
    for (const AttnSample& s : ds.samples)
        total += loss_value(loss, s.y * attn_forward(params, s));
    return total / static_cast<double>(ds.n());
}

/// Softmax Jacobian diag(s) - s s^T; input must lie on the probability simplex.
inline Matrix softmax_jacobian(const Vector& s) {
    double sum = 0.0;
    for (double x : s.data) {
        if (x < 0.0) throw std::domain_error("softmax_jacobian: negative entry");
        sum += x;
    }
    if (std::fabs(sum - 1.0) > 1e-9)
        throw std::domain_error("softmax_jacobian: input not on the simplex");
    Matrix j(s.size(), s.size());
    for (std::size_t a = 0; a < s.size(); ++a)
        for (std::size_t b = 0; b < s.size(); ++b)
            j(a, b) = (a == b ? s[a] : 0.0) - s[a] * s[b];
    return j;
}

/// Gradient of the ERM objective in W, from the closed form
///   (1/n) sum_i l_i' X_i^T (diag(s_i) - s_i s_i^T) gamma_i z_i^T
/// with s_i = softmax(X_i W z_i) and gamma_i = y_i X_i v.
inline Matrix grad_W(const ModelParams& params, const AttnDataset& ds, LossKind loss) {
    const std::size_t d = params.W.rows;
    Matrix g(d, d);
    for (const AttnSample& smp : ds.samples) {
        const Vector s = attn_probs(params.W, smp);
        const Vector gamma = token_scores(params.v, smp);
        const double margin = dot(gamma, s);  // y f
        const double lp = loss_deriv(loss, margin);

        // u = (diag(s) - s s^T) gamma, computed without forming the Jacobian
        const double sg = dot(s, gamma);
        Vector u(s.size());
        for (std::size_t t = 0; t < s.size(); ++t) u[t] = s[t] * (gamma[t] - sg);

        const Vector xa = matvec_t(smp.X, u);  // X^T u, length d
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) g(i, j) += lp * xa[i] * smp.z[j];
    }
    const double inv_n = 1.0 / static_cast<double>(ds.n());
    for (double& x : g.data) x *= inv_n;
    return g;
}

/// Gradient of the ERM objective in v: (1/n) sum_i l_i' y_i X_i^T s_i.
inline Vector grad_v(const ModelParams& params, const AttnDataset& ds, LossKind loss) {
    Vector g(params.v.size());
    for (const AttnSample& smp : ds.samples) {
        const Vector s = attn_probs(params.W, smp);
        const Vector feats = matvec_t(smp.X, s);
        const double lp = loss_deriv(loss, smp.y * dot(params.v, feats));
        for (std::size_t j = 0; j < g.size(); ++j) g[j] += lp * smp.y * feats[j];
    }
    const double inv_n = 1.0 / static_cast<double>(ds.n());
    for (double& x : g.data) x *= inv_n;
    return g;
}

}  // namespace attnmd
