#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "attnmd/attention.hpp"
#include "attnmd/dataset.hpp"
#include "attnmd/linalg.hpp"
#include "attnmd/mirror.hpp"

namespace attnmd {

enum class SvmStatus { Optimal, Infeasible, MaxIter };

inline std::string to_string(SvmStatus s) {
    switch (s) {
        case SvmStatus::Optimal: return "optimal";
        case SvmStatus::Infeasible: return "infeasible";
        default: return "maxiter";
    }
}

/// Result of an lp min-norm margin problem. For the attention problem the
/// weights live in W; for the head problem in v. constraint_ids carries the
/// (sample, token) pair of each margin row ((sample, sample) for the head
/// problem), in the same order as margins.
struct SvmSolution {
    SvmStatus status = SvmStatus::MaxIter;
    Matrix W;
    Vector v;
    bool matrix_problem = true;
    Vector margins;
    std::vector<std::pair<std::size_t, std::size_t>> constraint_ids;
    std::vector<std::size_t> active_set;
    double objective = 0.0;
    double label_margin = 0.0;
    double kkt_residual = std::numeric_limits<double>::infinity();
    std::size_t iterations = 0;
    std::string note;
};

namespace detail {

constexpr double kActiveTol = 1e-4;      // |margin - 1| window for the active set
constexpr double kFeasTol = 1e-8;        // margins >= 1 - kFeasTol at Optimal
constexpr double kGapTol = 1e-9;         // barrier continuation target m/t
constexpr std::size_t kNewtonCap = 4000;  // total Newton iterations per solve

/// Solve (A + jitter I) x = b for symmetric positive semidefinite A by
/// Cholesky, escalating the jitter until the factorization succeeds.
inline std::vector<double> spd_solve(std::vector<double> a, std::size_t n,
                                     const std::vector<double>& b) {
    double max_diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::fabs(a[i * n + i]));
    double jitter = 0.0;
    for (int attempt = 0; attempt < 14; ++attempt) {
        std::vector<double> l = a;
        if (jitter > 0.0)
            for (std::size_t i = 0; i < n; ++i) l[i * n + i] += jitter;
        bool ok = true;
        for (std::size_t j = 0; j < n && ok; ++j) {
            double diag = l[j * n + j];
            for (std::size_t k = 0; k < j; ++k) diag -= l[j * n + k] * l[j * n + k];
            if (diag <= 0.0 || !std::isfinite(diag)) {
                ok = false;
                break;
            }
            diag = std::sqrt(diag);
            l[j * n + j] = diag;
            for (std::size_t i = j + 1; i < n; ++i) {
                double s = l[i * n + j];
                for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
                l[i * n + j] = s / diag;
            }
        }
        if (ok) {
            std::vector<double> x = b;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t k = 0; k < i; ++k) x[i] -= l[i * n + k] * x[k];
                x[i] /= l[i * n + i];
            }
            for (std::size_t ii = n; ii-- > 0;) {
                for (std::size_t k = ii + 1; k < n; ++k) x[ii] -= l[k * n + ii] * x[k];
                x[ii] /= l[ii * n + ii];
            }
            return x;
        }
        jitter = jitter == 0.0 ? std::max(1e-14, 1e-14 * max_diag) : jitter * 100.0;
    }
    throw std::runtime_error("spd_solve: factorization failed");
}

struct SmoothPotential {
    double p;
    double eps;

    double value(const std::vector<double>& w) const {
        double s = 0.0;
        for (double x : w) s += std::pow(x * x + eps * eps, p / 2.0);
        return s / p;
    }
    double grad(double x) const {
        if (p == 2.0) return x;
        return x * std::pow(x * x + eps * eps, p / 2.0 - 1.0);
    }
    double hess(double x) const {
        if (p == 2.0) return 1.0;
        const double q = x * x + eps * eps;
        return std::pow(q, p / 2.0 - 2.0) * ((p - 1.0) * x * x + eps * eps);
    }
};

struct CoreResult {
    std::vector<double> w;
    std::vector<double> margins;
    std::vector<double> duals;  // on the polished active set, aligned with active indices
    std::vector<std::size_t> active;
    double kkt_residual = std::numeric_limits<double>::infinity();
    std::size_t iterations = 0;
    bool feasible = true;
    bool converged = false;
};

inline std::vector<double> all_margins(const std::vector<std::vector<double>>& rows,
                                       const std::vector<double>& w) {
    std::vector<double> m(rows.size());
    for (std::size_t c = 0; c < rows.size(); ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) s += rows[c][i] * w[i];
        m[c] = s;
    }
    return m;
}

/// Damped Newton on F(w) = t * psi_eps(w) - sum log(a_c^T w - 1), keeping the
/// iterate strictly feasible. Returns false if the iteration budget runs out.
inline bool center_phase2(const std::vector<std::vector<double>>& rows, double t,
                          const SmoothPotential& pot, std::vector<double>& w,
                          std::size_t& newton_iters) {
    const std::size_t dim = w.size();
    for (int it = 0; it < 120; ++it) {
        if (++newton_iters > kNewtonCap) return false;
        std::vector<double> m = all_margins(rows, w);
        std::vector<double> g(dim);
        std::vector<double> h(dim * dim, 0.0);
        for (std::size_t i = 0; i < dim; ++i) {
            g[i] = t * pot.grad(w[i]);
            h[i * dim + i] = t * pot.hess(w[i]);
        }
        for (std::size_t c = 0; c < rows.size(); ++c) {
            const double slack = m[c] - 1.0;
            const double inv = 1.0 / slack;
            const double inv2 = inv * inv;
            for (std::size_t i = 0; i < dim; ++i) {
                g[i] -= rows[c][i] * inv;
                for (std::size_t j = 0; j <= i; ++j) {
                    h[i * dim + j] += rows[c][i] * rows[c][j] * inv2;
                }
            }
        }
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t j = i + 1; j < dim; ++j) h[i * dim + j] = h[j * dim + i];

        std::vector<double> neg_g(dim);
        for (std::size_t i = 0; i < dim; ++i) neg_g[i] = -g[i];
        std::vector<double> step = spd_solve(h, dim, neg_g);

        double decrement = 0.0;
        for (std::size_t i = 0; i < dim; ++i) decrement += -g[i] * step[i];
        if (decrement * 0.5 < 1e-12) return true;

        // largest step keeping every slack positive
        double alpha_max = 1.0;
        for (std::size_t c = 0; c < rows.size(); ++c) {
            double ad = 0.0;
            for (std::size_t i = 0; i < dim; ++i) ad += rows[c][i] * step[i];
            if (ad < 0.0) alpha_max = std::min(alpha_max, 0.99 * (1.0 - m[c]) / ad);
        }
        const auto fval = [&](const std::vector<double>& x) {
            double f = t * pot.value(x);
            const std::vector<double> mx = all_margins(rows, x);
            for (double v : mx) {
                if (v <= 1.0) return std::numeric_limits<double>::infinity();
                f -= std::log(v - 1.0);
            }
            return f;
        };
        const double f0 = fval(w);
        double alpha = alpha_max;
        bool moved = false;
        for (int ls = 0; ls < 60; ++ls) {
            std::vector<double> trial = w;
            for (std::size_t i = 0; i < dim; ++i) trial[i] += alpha * step[i];
            if (fval(trial) <= f0 - 1e-4 * alpha * decrement) {
                w = std::move(trial);
                moved = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!moved) return true;  // stalled at line-search resolution
    }
    return true;
}

/// Phase I: maximize slack s over {(w, s) : a_c^T w >= s, sum |w_i|^p <= 1}.
/// Feasible start is (0, -1). Returns the best slack found.
inline double phase1_max_slack(const std::vector<std::vector<double>>& rows, double p,
                               std::size_t dim, std::vector<double>& w_out,
                               std::size_t& newton_iters) {
    std::vector<double> w(dim, 0.0);
    double s = -1.0;
    const std::size_t m = rows.size();

    double eps0 = std::min(1e-2, std::pow(0.1 / static_cast<double>(dim), 1.0 / p));
    for (double eps : {eps0, 1e-4, 1e-6}) {
        SmoothPotential ball{p, eps};
        double t = 1.0;
        while (static_cast<double>(m + 1) / t >= kGapTol) {
            for (int it = 0; it < 120; ++it) {
                if (++newton_iters > kNewtonCap) return s;
                std::vector<double> slack(m);
                for (std::size_t c = 0; c < m; ++c) {
                    double acw = 0.0;
                    for (std::size_t i = 0; i < dim; ++i) acw += rows[c][i] * w[i];
                    slack[c] = acw - s;
                }
                double phi = p * ball.value(w);  // sum (w^2+eps^2)^(p/2)
                const double ball_slack = 1.0 - phi;

                const std::size_t n1 = dim + 1;
                std::vector<double> g(n1, 0.0);
                std::vector<double> h(n1 * n1, 0.0);
                g[dim] = -t;
                for (std::size_t c = 0; c < m; ++c) {
                    const double inv = 1.0 / slack[c];
                    const double inv2 = inv * inv;
                    for (std::size_t i = 0; i < dim; ++i) {
                        g[i] -= rows[c][i] * inv;
                        for (std::size_t j = 0; j <= i; ++j)
                            h[i * n1 + j] += rows[c][i] * rows[c][j] * inv2;
                        h[dim * n1 + i] -= rows[c][i] * inv2;
                    }
                    g[dim] += inv;
                    h[dim * n1 + dim] += inv2;
                }
                const double inv_ball = 1.0 / ball_slack;
                for (std::size_t i = 0; i < dim; ++i) {
                    const double dphi = p * ball.grad(w[i]);
                    const double d2phi = p * ball.hess(w[i]);
                    g[i] += dphi * inv_ball;
                    h[i * n1 + i] += d2phi * inv_ball;
                    for (std::size_t j = 0; j <= i; ++j)
                        h[i * n1 + j] += p * ball.grad(w[i]) * p * ball.grad(w[j]) * inv_ball * inv_ball;
                }
                for (std::size_t i = 0; i < n1; ++i)
                    for (std::size_t j = i + 1; j < n1; ++j) h[i * n1 + j] = h[j * n1 + i];

                std::vector<double> neg_g(n1);
                for (std::size_t i = 0; i < n1; ++i) neg_g[i] = -g[i];
                std::vector<double> step = spd_solve(h, n1, neg_g);
                double decrement = 0.0;
                for (std::size_t i = 0; i < n1; ++i) decrement += -g[i] * step[i];
                if (decrement * 0.5 < 1e-12) break;

                const auto fval = [&](const std::vector<double>& wx, double sx) {
                    double f = -t * sx;
                    for (std::size_t c = 0; c < m; ++c) {
                        double acw = 0.0;
                        for (std::size_t i = 0; i < dim; ++i) acw += rows[c][i] * wx[i];
                        if (acw - sx <= 0.0) return std::numeric_limits<double>::infinity();
                        f -= std::log(acw - sx);
                    }
                    const double ph = p * SmoothPotential{p, eps}.value(wx);
                    if (ph >= 1.0) return std::numeric_limits<double>::infinity();
                    return f - std::log(1.0 - ph);
                };
                const double f0 = fval(w, s);
                double alpha = 1.0;
                bool moved = false;
                for (int ls = 0; ls < 60; ++ls) {
                    std::vector<double> wt = w;
                    for (std::size_t i = 0; i < dim; ++i) wt[i] += alpha * step[i];
                    const double st = s + alpha * step[dim];
                    if (fval(wt, st) <= f0 - 1e-4 * alpha * decrement) {
                        w = std::move(wt);
                        s = st;
                        moved = true;
                        break;
                    }
                    alpha *= 0.5;
                }
                if (!moved) break;
            }
            t *= 10.0;
        }
    }
    w_out = w;
    return s;
}

/// Equality-constrained Newton polish on the active set: minimizes the exact
/// (unsmoothed) potential subject to active margins pinned at 1. Drops
/// constraints whose multipliers come out negative.
inline void polish_active_set(const std::vector<std::vector<double>>& rows, double p,
                              std::vector<double>& w, std::vector<std::size_t>& active,
                              std::vector<double>& duals, double& kkt_residual) {
    const std::size_t dim = w.size();
    const Potential pot(p);

    for (int round = 0; round < 4 && !active.empty(); ++round) {
        std::vector<double> lambda(active.size(), 0.0);
        for (int it = 0; it < 60; ++it) {
            std::vector<double> hdiag(dim);
            for (std::size_t i = 0; i < dim; ++i) {
                const double mag = std::max(std::fabs(w[i]), 1e-10);
                double h = (p - 1.0) * std::pow(mag, p - 2.0);
                hdiag[i] = std::max(h, 1e-12);
            }
            // Schur system S lam = (1 - Aw) + A H^-1 grad
            const std::size_t na = active.size();
            std::vector<double> hinv_g(dim);
            for (std::size_t i = 0; i < dim; ++i)
                hinv_g[i] = mirror_scalar(w[i], p) / hdiag[i];
            std::vector<double> rhs(na);
            std::vector<double> s_mat(na * na, 0.0);
            for (std::size_t a = 0; a < na; ++a) {
                const std::vector<double>& ra = rows[active[a]];
                double aw = 0.0, ag = 0.0;
                for (std::size_t i = 0; i < dim; ++i) {
                    aw += ra[i] * w[i];
                    ag += ra[i] * hinv_g[i];
                }
                rhs[a] = (1.0 - aw) + ag;
                for (std::size_t b = 0; b <= a; ++b) {
                    const std::vector<double>& rb = rows[active[b]];
                    double s = 0.0;
                    for (std::size_t i = 0; i < dim; ++i) s += ra[i] * rb[i] / hdiag[i];
                    s_mat[a * na + b] = s;
                    s_mat[b * na + a] = s;
                }
            }
            lambda = spd_solve(s_mat, na, rhs);
            std::vector<double> step(dim);
            for (std::size_t i = 0; i < dim; ++i) {
                double al = 0.0;
                for (std::size_t a = 0; a < na; ++a) al += rows[active[a]][i] * lambda[a];
                step[i] = (al - mirror_scalar(w[i], p)) / hdiag[i];
            }
            // damped update on the KKT residual
            const auto residual = [&](const std::vector<double>& x) {
                double r = 0.0;
                for (std::size_t i = 0; i < dim; ++i) {
                    double al = 0.0;
                    for (std::size_t a = 0; a < na; ++a) al += rows[active[a]][i] * lambda[a];
                    r = std::max(r, std::fabs(mirror_scalar(x[i], p) - al));
                }
                for (std::size_t a = 0; a < na; ++a) {
                    double aw = 0.0;
                    for (std::size_t i = 0; i < dim; ++i) aw += rows[active[a]][i] * x[i];
                    r = std::max(r, std::fabs(aw - 1.0));
                }
                return r;
            };
            const double r0 = residual(w);
            double alpha = 1.0;
            bool moved = false;
            for (int ls = 0; ls < 40; ++ls) {
                std::vector<double> trial = w;
                for (std::size_t i = 0; i < dim; ++i) trial[i] += alpha * step[i];
                if (residual(trial) < r0 * (1.0 - 1e-4 * alpha) || residual(trial) < 1e-14) {
                    w = std::move(trial);
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if (!moved || residual(w) < 1e-14) break;
        }
        // negative multipliers mean the constraint should not be active
        std::vector<std::size_t> kept;
        std::vector<double> kept_duals;
        for (std::size_t a = 0; a < active.size(); ++a) {
            if (lambda[a] >= -1e-9) {
                kept.push_back(active[a]);
                kept_duals.push_back(std::max(lambda[a], 0.0));
            }
        }
        const bool dropped = kept.size() != active.size();
        active = std::move(kept);
        duals = std::move(kept_duals);
        if (!dropped) break;
    }

    // scaled stationarity residual at the final point
    double grad_scale = 0.0;
    double res = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
        double al = 0.0;
        for (std::size_t a = 0; a < active.size(); ++a) al += rows[active[a]][i] * duals[a];
        const double gi = mirror_scalar(w[i], p);
        grad_scale = std::max(grad_scale, std::fabs(gi));
        res = std::max(res, std::fabs(gi - al));
    }
    kkt_residual = res / std::max(grad_scale, 1e-300);
}

/// Full pipeline: phase-I feasibility, smoothed barrier continuation, then an
/// unsmoothed polish on the detected active set.
inline CoreResult lp_min_norm(const std::vector<std::vector<double>>& rows, double p,
                              std::size_t dim) {
    CoreResult res;
    std::size_t iters = 0;

    std::vector<double> w_p1;
    const double slack = phase1_max_slack(rows, p, dim, w_p1, iters);
    if (slack <= 1e-8) {
        res.feasible = false;
        res.iterations = iters;
        return res;
    }
    std::vector<double> w = w_p1;
    {
        const std::vector<double> m = all_margins(rows, w);
        double m_min = m.empty() ? 1.0 : *std::min_element(m.begin(), m.end());
        const double scale = (1.0 + 1e-3) / m_min;
        for (double& x : w) x *= scale;
    }

    std::vector<double> eps_schedule;
    if (p == 2.0) {
        eps_schedule = {0.0};
    } else {
        eps_schedule = {1e-2, 1e-4, 1e-6, 1e-8, 1e-10};
    }
    bool ok = true;
    bool first = true;
    for (double eps : eps_schedule) {
        SmoothPotential pot{p, eps};
        double t = first ? 1.0 : std::pow(10.0, std::ceil(std::log10(rows.size() / kGapTol)));
        first = false;
        while (true) {
            ok = center_phase2(rows, t, pot, w, iters);
            if (!ok) break;
            if (static_cast<double>(rows.size()) / t < kGapTol) break;
            t *= 10.0;
        }
        if (!ok) break;
    }

    res.w = w;
    res.margins = all_margins(rows, w);
    for (std::size_t c = 0; c < res.margins.size(); ++c)
        if (std::fabs(res.margins[c] - 1.0) <= kActiveTol) res.active.push_back(c);
    if (res.active.empty()) {
        // min-norm solutions always touch the boundary; fall back to the closest row
        std::size_t best = 0;
        for (std::size_t c = 1; c < res.margins.size(); ++c)
            if (res.margins[c] < res.margins[best]) best = c;
        res.active.push_back(best);
    }
    polish_active_set(rows, p, res.w, res.active, res.duals, res.kkt_residual);
    res.margins = all_margins(rows, res.w);
    res.iterations = iters;
    res.converged = ok;
    return res;
}

}  // namespace detail

/// Exact solve of the lp attention SVM:
///   min ||W||_{p,p}  s.t.  (X_{i,alpha_i} - X_{i,t})^T W z_i >= 1  for t != alpha_i.
inline SvmSolution solve_att_svm(const AttnDataset& ds, const TokenSelection& alpha, double p) {
    validate(ds);
    require(p > 1.0, "solve_att_svm: requires p > 1");
    require(alpha.size() == ds.n(), "solve_att_svm: selection size mismatch");

    const std::size_t d = ds.d();
    const std::size_t T = ds.T();
    SvmSolution sol;
    sol.matrix_problem = true;

    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < ds.n(); ++i) {
        require(alpha[i] < T, "solve_att_svm: token index out of range");
        const AttnSample& smp = ds.samples[i];
        for (std::size_t t = 0; t < T; ++t) {
            if (t == alpha[i]) continue;
            std::vector<double> row(d * d);
            double norm2 = 0.0;
            for (std::size_t a = 0; a < d; ++a) {
                const double diff = smp.X(alpha[i], a) - smp.X(t, a);
                for (std::size_t b = 0; b < d; ++b) {
                    const double val = diff * smp.z[b];
                    row[a * d + b] = val;
                    norm2 += val * val;
                }
            }
            if (norm2 == 0.0) {
                sol.status = SvmStatus::Infeasible;
                sol.note = "degenerate constraint: tokens " + std::to_string(alpha[i]) + " and " +
                           std::to_string(t) + " of sample " + std::to_string(i) +
                           " are indistinguishable";
                return sol;
            }
            rows.push_back(std::move(row));
            sol.constraint_ids.emplace_back(i, t);
        }
    }
    require(!rows.empty(), "solve_att_svm: empty constraint set");

    const detail::CoreResult core = detail::lp_min_norm(rows, p, d * d);
    sol.iterations = core.iterations;
    if (!core.feasible) {
        sol.status = SvmStatus::Infeasible;
        sol.note = "phase-I max slack below tolerance";
        return sol;
    }
    sol.W = Matrix(d, d);
    sol.W.data = core.w;
    sol.margins.data = core.margins;
    sol.active_set = core.active;
    sol.objective = pq_norm(sol.W, p);
    sol.kkt_residual = core.kkt_residual;

    double min_margin = std::numeric_limits<double>::infinity();
    for (double m : core.margins) min_margin = std::min(min_margin, m);
    const bool ok =
        core.converged && min_margin >= 1.0 - detail::kFeasTol && sol.kkt_residual < 1e-6;
    sol.status = ok ? SvmStatus::Optimal : SvmStatus::MaxIter;
    return sol;
}

/// Exact solve of the lp head SVM over labeled points:
///   min ||v||_p  s.t.  y_i x_i^T v >= 1.
inline SvmSolution solve_v_svm(const std::vector<std::pair<Vector, int>>& points, double p) {
    require(p > 1.0, "solve_v_svm: requires p > 1");
    require(!points.empty(), "solve_v_svm: empty point set");
    const std::size_t d = points.front().first.size();

    SvmSolution sol;
    sol.matrix_problem = false;

    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < points.size(); ++i) {
        require(points[i].first.size() == d, "solve_v_svm: dimension mismatch");
        require(points[i].second == 1 || points[i].second == -1, "solve_v_svm: labels must be +-1");
        std::vector<double> row(d);
        double norm2 = 0.0;
        for (std::size_t a = 0; a < d; ++a) {
            row[a] = points[i].second * points[i].first[a];
            norm2 += row[a] * row[a];
        }
        if (norm2 == 0.0) {
            sol.status = SvmStatus::Infeasible;
            sol.note = "degenerate constraint: zero point " + std::to_string(i);
            return sol;
        }
        rows.push_back(std::move(row));
        sol.constraint_ids.emplace_back(i, i);
    }

    const detail::CoreResult core = detail::lp_min_norm(rows, p, d);
    sol.iterations = core.iterations;
    if (!core.feasible) {
        sol.status = SvmStatus::Infeasible;
        sol.note = "points are not separable";
        return sol;
    }
    sol.v.data = core.w;
    sol.margins.data = core.margins;
    sol.active_set = core.active;
    sol.objective = lp_norm(sol.v, p);
    sol.label_margin = 1.0 / sol.objective;
    sol.kkt_residual = core.kkt_residual;

    double min_margin = std::numeric_limits<double>::infinity();
    for (double m : core.margins) min_margin = std::min(min_margin, m);
    const bool ok =
        core.converged && min_margin >= 1.0 - detail::kFeasTol && sol.kkt_residual < 1e-6;
    sol.status = ok ? SvmStatus::Optimal : SvmStatus::MaxIter;
    return sol;
}

/// Head SVM on the tokens selected by alpha.
inline SvmSolution solve_v_svm(const AttnDataset& ds, const TokenSelection& alpha, double p) {
    std::vector<std::pair<Vector, int>> points;
    for (std::size_t i = 0; i < ds.n(); ++i) {
        Vector x(ds.d());
        for (std::size_t a = 0; a < ds.d(); ++a) x[a] = ds.samples[i].X(alpha[i], a);
        points.emplace_back(std::move(x), ds.samples[i].y);
    }
    return solve_v_svm(points, p);
}

/// Per-sample support/non-support token split at the SVM solution.
struct SupportSets {
    std::vector<std::vector<std::size_t>> support;      // T_i
    std::vector<std::vector<std::size_t>> non_support;  // complement minus alpha_i
    bool empty_support_warning = false;                 // some sample matched nothing at tol
};

inline SupportSets support_tokens(const AttnDataset& ds, const TokenSelection& alpha,
                                  const SvmSolution& sol, double tol = detail::kActiveTol) {
    require(sol.status == SvmStatus::Optimal, "support_tokens: solution is not optimal");
    SupportSets sets;
    sets.support.resize(ds.n());
    sets.non_support.resize(ds.n());
    for (std::size_t c = 0; c < sol.constraint_ids.size(); ++c) {
        const auto [i, t] = sol.constraint_ids[c];
        if (std::fabs(sol.margins[c] - 1.0) <= tol)
            sets.support[i].push_back(t);
        else
            sets.non_support[i].push_back(t);
    }
    for (std::size_t i = 0; i < ds.n(); ++i)
        if (sets.support[i].empty()) sets.empty_support_warning = true;
    (void)alpha;
    return sets;
}

/// Local-optimality check per Definition of locally optimal tokens: every
/// support token must score strictly below the selected token.
struct LocalOptReport {
    struct PerSample {
        std::vector<std::size_t> support;
        double alpha_score = 0.0;
        double min_gap = std::numeric_limits<double>::infinity();  // alpha minus best support
        bool strict = true;
    };
    std::vector<PerSample> samples;
    bool verdict = false;
    SvmStatus solver_status = SvmStatus::MaxIter;
};

inline LocalOptReport verify_local_optimality(const AttnDataset& ds, const Vector& v,
                                              const TokenSelection& alpha, double p) {
    const SvmSolution sol = solve_att_svm(ds, alpha, p);
    LocalOptReport report;
    report.solver_status = sol.status;
    if (sol.status != SvmStatus::Optimal) return report;

    const SupportSets sets = support_tokens(ds, alpha, sol);
    report.verdict = true;
    for (std::size_t i = 0; i < ds.n(); ++i) {
        LocalOptReport::PerSample per;
        per.support = sets.support[i];
        const Vector scores = token_scores(v, ds.samples[i]);
        per.alpha_score = scores[alpha[i]];
        for (std::size_t tau : per.support) {
            per.min_gap = std::min(per.min_gap, per.alpha_score - scores[tau]);
            if (scores[alpha[i]] <= scores[tau]) per.strict = false;
        }
        report.verdict = report.verdict && per.strict;
        report.samples.push_back(std::move(per));
    }
    return report;
}

/// Dataset-dependent constants used by the convergence analysis.
struct Diagnostics {
    double delta_prime = 0.0;  // +inf when every non-selected token is support
    double delta = 0.0;
    double A = 1.0;
    double mu0 = 0.0;
    double Gamma = 0.0;  // global score gap
    std::vector<double> gamma_gap;      // NaN for samples with empty support
    std::vector<double> gamma_bar_gap;  // likewise
    std::vector<double> S;              // support softmax mass at W_mm
    std::vector<double> Q;              // non-support softmax mass at W_mm
};

inline Diagnostics compute_constants(const AttnDataset& ds, const Vector& v,
                                     const TokenSelection& alpha, const SvmSolution& sol,
                                     double p) {
    require(sol.status == SvmStatus::Optimal, "compute_constants: solution is not optimal");
    const SupportSets sets = support_tokens(ds, alpha, sol);
    Diagnostics diag;

    double dp = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < sol.constraint_ids.size(); ++c) {
        const auto [i, t] = sol.constraint_ids[c];
        const auto& ns = sets.non_support[i];
        if (std::find(ns.begin(), ns.end(), t) != ns.end())
            dp = std::min(dp, 0.5 * (sol.margins[c] - 1.0));
    }
    diag.delta_prime = dp;
    diag.delta = std::min(0.25, dp);

    const double q = p / (p - 1.0);
    double max_outer = 0.0;
    for (const AttnSample& smp : ds.samples) {
        for (std::size_t t = 0; t < ds.T(); ++t) {
            double s = 0.0;
            for (std::size_t a = 0; a < ds.d(); ++a)
                for (std::size_t b = 0; b < ds.d(); ++b)
                    s += std::pow(std::fabs(smp.X(t, a) * smp.z[b]), q);
            max_outer = std::max(max_outer, std::pow(s, 1.0 / q));
        }
    }
    diag.A = std::max(1.0, pq_norm(sol.W, p) * max_outer);

    if (p >= 2.0) {
        diag.mu0 = std::pow(diag.delta / (8.0 * diag.A), p) / p;
    } else {
        const double den = 4.0 * diag.A * std::pow(static_cast<double>(ds.d()), 2.0 / p - 1.0);
        const double base = diag.delta * (p - 1.0) / den;
        diag.mu0 = base * base / p;
    }

    for (std::size_t i = 0; i < ds.n(); ++i) {
        const Vector scores = token_scores(v, ds.samples[i]);
        double lo = scores[0], hi = scores[0];
        for (std::size_t t = 1; t < scores.size(); ++t) {
            lo = std::min(lo, scores[t]);
            hi = std::max(hi, scores[t]);
        }
        diag.Gamma = std::max(diag.Gamma, hi - lo);

        const Vector probs = attn_probs(sol.W, ds.samples[i]);
        double s_mass = 0.0, q_mass = 0.0;
        for (std::size_t t : sets.support[i]) s_mass += probs[t];
        for (std::size_t t : sets.non_support[i]) q_mass += probs[t];
        diag.S.push_back(s_mass);
        diag.Q.push_back(q_mass);

        if (sets.support[i].empty()) {
            diag.gamma_gap.push_back(std::numeric_limits<double>::quiet_NaN());
            diag.gamma_bar_gap.push_back(std::numeric_limits<double>::quiet_NaN());
        } else {
            double best = -std::numeric_limits<double>::infinity();
            double worst = std::numeric_limits<double>::infinity();
            for (std::size_t t : sets.support[i]) {
                best = std::max(best, scores[t]);
                worst = std::min(worst, scores[t]);
            }
            diag.gamma_gap.push_back(scores[alpha[i]] - best);
            diag.gamma_bar_gap.push_back(scores[alpha[i]] - worst);
        }
    }
    return diag;
}

/// Cone sets around a reference direction.
struct ConeSpec {
    double p;
    double mu;
    double R;
    Matrix reference;
};

struct ConeMembership {
    bool in_S = false;
    bool in_C = false;
    double divergence = 0.0;
};

inline ConeMembership cone_membership(const ConeSpec& spec, const Matrix& w) {
    ConeMembership out;
    out.divergence = directional_bregman(Potential(spec.p), spec.reference, w);
    out.in_S = out.divergence <= spec.mu;
    out.in_C = out.in_S && pq_norm(w, spec.p) >= spec.R;
    return out;
}

inline nlohmann::json to_json(const SvmSolution& sol) {
    nlohmann::json j;
    j["status"] = to_string(sol.status);
    j["iterations"] = sol.iterations;
    if (!sol.note.empty()) j["note"] = sol.note;
    if (sol.status == SvmStatus::Infeasible) return j;
    if (sol.matrix_problem) {
        auto rows = nlohmann::json::array();
        for (std::size_t i = 0; i < sol.W.rows; ++i) {
            auto row = nlohmann::json::array();
            for (std::size_t k = 0; k < sol.W.cols; ++k) row.push_back(sol.W(i, k));
            rows.push_back(std::move(row));
        }
        j["weights"] = std::move(rows);
    } else {
        j["weights"] = sol.v.data;
        j["label_margin"] = sol.label_margin;
    }
    j["margins"] = sol.margins.data;
    j["active_set"] = sol.active_set;
    j["objective"] = sol.objective;
    j["kkt_residual"] = sol.kkt_residual;
    return j;
}

}  // namespace attnmd
