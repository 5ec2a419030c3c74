#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "attnmd/attention.hpp"
#include "attnmd/loss.hpp"
#include "attnmd/mirror.hpp"
#include "attnmd/rng.hpp"
#include "attnmd/svm.hpp"
#include "attnmd/train.hpp"

namespace attnmd {

struct RpConfig {
    double p = 2.0;
    std::vector<double> radii;
    LossKind loss = LossKind::Logistic;
    std::size_t fw_iters = 2000;
    double fw_tol = 1e-6;
    bool joint = false;
    double r_c0 = 1.0;   // r(R) = c0 * exp(c1 * R)
    double r_c1 = 0.8;
    RngSeed seed{0};
};

inline void validate(const RpConfig& cfg) {
    require(cfg.p > 1.0, "rp: requires p > 1");
    require(!cfg.radii.empty(), "rp: empty radius grid");
    for (std::size_t i = 0; i + 1 < cfg.radii.size(); ++i)
        require(cfg.radii[i] < cfg.radii[i + 1], "rp: radii must be strictly increasing");
    require(cfg.radii.front() > 0.0, "rp: radii must be positive");
    require(cfg.fw_tol > 0.0, "rp: fw_tol must be positive");
}

/// Linear minimization oracle over the lp,p ball of radius R:
/// argmin_{||s|| <= R} <grad, s>. Attains Hoelder equality
/// <grad, s> = -R ||grad||_{q,q} with q = p/(p-1); returns 0 on zero gradient.
inline Matrix lp_ball_lmo(const Matrix& grad, double p, double R) {
    require(p > 1.0 && R > 0.0, "lp_ball_lmo: requires p > 1 and R > 0");
    const double q = p / (p - 1.0);
    double norm_q = 0.0;
    for (double g : grad.data) norm_q += std::pow(std::fabs(g), q);
    if (norm_q <= 0.0) return Matrix(grad.rows, grad.cols);
    norm_q = std::pow(norm_q, 1.0 / q);

    Matrix s(grad.rows, grad.cols);
    const double scale = R / std::pow(norm_q, q - 1.0);
    for (std::size_t i = 0; i < grad.data.size(); ++i) {
        const double g = grad.data[i];
        if (g == 0.0) continue;
        s.data[i] = -scale * std::pow(std::fabs(g), q - 1.0) * (g > 0.0 ? 1.0 : -1.0);
    }
    return s;
}

inline Vector lp_ball_lmo(const Vector& grad, double p, double R) {
    Matrix g(1, grad.size());
    g.data = grad.data;
    Vector out(grad.size());
    out.data = lp_ball_lmo(g, p, R).data;
    return out;
}

struct RpResult {
    Matrix W;
    double loss = 0.0;
    double fw_gap = std::numeric_limits<double>::infinity();
    std::size_t iterations = 0;
    bool converged = false;
};

namespace detail {

/// Frank-Wolfe with the closed-form LMO and Armijo backtracking from a given
/// start. Feasibility is free: every iterate is a convex combination of ball
/// points.
inline RpResult frank_wolfe_w(const AttnDataset& ds, const Vector& v, double p, double R,
                              LossKind loss, std::size_t max_iters, double tol, Matrix W) {
    RpResult res;
    ModelParams params{std::move(W), v};
    double cur_loss = erm_objective(params, ds, loss);
    for (std::size_t k = 0; k < max_iters; ++k) {
        const Matrix g = grad_W(params, ds, loss);
        const Matrix s = lp_ball_lmo(g, p, R);
        const Matrix dir = s - params.W;
        const double gap = -inner(g, dir);
        res.fw_gap = gap;
        res.iterations = k + 1;
        if (gap <= tol) {
            res.converged = true;
            break;
        }
        double step = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 200; ++ls) {
            ModelParams trial{params.W + step * dir, v};
            const double trial_loss = erm_objective(trial, ds, loss);
            if (trial_loss <= cur_loss - 1e-4 * step * gap) {
                params.W = std::move(trial.W);
                cur_loss = trial_loss;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if (!moved) break;
    }
    res.W = params.W;
    res.loss = cur_loss;
    return res;
}

}  // namespace detail

/// Ball-constrained ERM minimizer, argmin L(W) s.t. ||W||_{p,p} <= R, via
/// multi-start Frank-Wolfe (best loss wins). The problem is nonconvex, so the
/// result is a stationary point with a reported FW gap, not a certified
/// global minimum.
inline RpResult solve_rp(const AttnDataset& ds, const Vector& v, double p, double R, LossKind loss,
                         std::size_t fw_iters = 2000, double fw_tol = 1e-6,
                         const std::vector<Matrix>& extra_starts = {}, RngSeed seed = RngSeed{0}) {
    validate(ds);
    require(R > 0.0, "solve_rp: R must be positive");
    const std::size_t d = ds.d();

    std::vector<Matrix> starts;
    starts.push_back(Matrix(d, d));  // zero start
    Rng rng(seed);
    Matrix rand_start(d, d);
    for (double& x : rand_start.data) x = rng.next_uniform(-1.0, 1.0);
    const double rn = pq_norm(rand_start, p);
    if (rn > 0.0) rand_start = (0.5 * R / rn) * rand_start;
    starts.push_back(std::move(rand_start));
    for (const Matrix& m : extra_starts)
        if (pq_norm(m, p) <= R * (1.0 + 1e-12)) starts.push_back(m);

    std::optional<RpResult> best;
    for (const Matrix& start : starts) {
        RpResult r = detail::frank_wolfe_w(ds, v, p, R, loss, fw_iters, fw_tol, start);
        if (!best || r.loss < best->loss) best = std::move(r);
    }
    return *best;
}

struct RpRow {
    double R = 0.0;
    std::optional<double> r;  // joint only
    double loss = 0.0;
    double w_dir_div = 0.0;
    std::optional<double> v_dir_div;  // joint only
    double fw_gap = 0.0;
};

struct RpSweep {
    std::vector<RpRow> rows;
    SvmStatus reference_status = SvmStatus::Optimal;
    TokenSelection alpha;
};

inline void write_csv(const RpSweep& sweep, std::ostream& out) {
    out << "R,r,loss,w_dir_div,v_dir_div\n";
    for (const RpRow& row : sweep.rows) {
        out << format_g17(row.R) << ',';
        if (row.r) out << format_g17(*row.r);
        out << ',' << format_g17(row.loss) << ',' << format_g17(row.w_dir_div) << ',';
        if (row.v_dir_div) out << format_g17(*row.v_dir_div);
        out << '\n';
    }
}

inline void write_csv(const RpSweep& sweep, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "write_csv: cannot open " + path);
    write_csv(sweep, out);
}

/// Radius sweep of the ball-constrained path against the globally-optimal
/// token SVM direction; warm-started along the grid.
inline RpSweep rp_sweep(const AttnDataset& ds, const Vector& v, const RpConfig& cfg) {
    validate(cfg);
    const Potential pot(cfg.p);
    RpSweep sweep;
    sweep.alpha = globally_optimal_tokens(v, ds);
    const SvmSolution ref = solve_att_svm(ds, sweep.alpha, cfg.p);
    sweep.reference_status = ref.status;
    if (ref.status == SvmStatus::Infeasible) return sweep;

    Matrix warm;
    bool have_warm = false;
    for (double R : cfg.radii) {
        std::vector<Matrix> extra;
        // cone seed at the current radius
        extra.push_back((R / pq_norm(ref.W, cfg.p)) * ref.W);
        if (have_warm) extra.push_back(warm);
        const RpResult r = solve_rp(ds, v, cfg.p, R, cfg.loss, cfg.fw_iters, cfg.fw_tol, extra,
                                    cfg.seed);
        RpRow row;
        row.R = R;
        row.loss = r.loss;
        row.fw_gap = r.fw_gap;
        row.w_dir_div = directional_bregman(pot, ref.W, r.W);
        sweep.rows.push_back(row);
        warm = r.W;
        have_warm = true;
    }
    return sweep;
}

namespace detail {

struct JointFwResult {
    ModelParams params;
    double loss = 0.0;
    double gap = std::numeric_limits<double>::infinity();
};

/// Alternating two-block Frank-Wolfe (W block, then v block, five passes
/// each per outer round) from a given start, with Armijo backtracking.
inline JointFwResult joint_block_fw(const AttnDataset& ds, const RpConfig& cfg, double R,
                                    double r, ModelParams params) {
    JointFwResult out;
    double cur_loss = erm_objective(params, ds, cfg.loss);
    for (std::size_t outer = 0; outer < cfg.fw_iters; ++outer) {
        for (int pass = 0; pass < 5; ++pass) {  // W block
            const Matrix g = grad_W(params, ds, cfg.loss);
            const Matrix s = lp_ball_lmo(g, cfg.p, R);
            const Matrix dir = s - params.W;
            const double gw = -inner(g, dir);
            if (gw <= cfg.fw_tol * 0.5) break;
            double step = 1.0;
            bool moved = false;
            for (int ls = 0; ls < 200; ++ls) {
                ModelParams trial{params.W + step * dir, params.v};
                const double tl = erm_objective(trial, ds, cfg.loss);
                if (tl <= cur_loss - 1e-4 * step * gw) {
                    params.W = std::move(trial.W);
                    cur_loss = tl;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if (!moved) break;
        }
        for (int pass = 0; pass < 5; ++pass) {  // v block
            const Vector g = grad_v(params, ds, cfg.loss);
            const Vector s = lp_ball_lmo(g, cfg.p, r);
            Vector dir = s - params.v;
            double gv = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) gv -= g[i] * dir[i];
            if (gv <= cfg.fw_tol * 0.5) break;
            double step = 1.0;
            bool moved = false;
            for (int ls = 0; ls < 200; ++ls) {
                ModelParams trial{params.W, params.v + step * dir};
                const double tl = erm_objective(trial, ds, cfg.loss);
                if (tl <= cur_loss - 1e-4 * step * gv) {
                    params.v = std::move(trial.v);
                    cur_loss = tl;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if (!moved) break;
        }
        // fresh joint gap; block-loop values go stale once the other block moved
        const Matrix gw_mat = grad_W(params, ds, cfg.loss);
        const Matrix sw = lp_ball_lmo(gw_mat, cfg.p, R);
        double gap_w = -inner(gw_mat, sw - params.W);
        const Vector gv_vec = grad_v(params, ds, cfg.loss);
        const Vector sv = lp_ball_lmo(gv_vec, cfg.p, r);
        double gap_v = 0.0;
        for (std::size_t i = 0; i < gv_vec.size(); ++i)
            gap_v -= gv_vec[i] * (sv[i] - params.v[i]);
        out.gap = gap_w + gap_v;
        if (out.gap <= cfg.fw_tol) break;
    }
    out.params = std::move(params);
    out.loss = cur_loss;
    return out;
}

}  // namespace detail

/// Joint regularization path with coupled radii r(R) = c0 exp(c1 R):
/// alternating block Frank-Wolfe over the two balls under logistic loss,
/// zero-started per radius. The reference token selection follows the
/// highest-softmax protocol applied to the path itself at the largest
/// radius, so the divergences track the basin the path commits to.
inline RpSweep joint_rp(const AttnDataset& ds, const RpConfig& cfg) {
    validate(cfg);
    require(cfg.loss == LossKind::Logistic, "joint_rp: theorem requires logistic loss");
    const Potential pot(cfg.p);
    const std::size_t d = ds.d();
    RpSweep sweep;

    for (double R : cfg.radii) require(R > 0.0, "joint_rp: zero radius has no direction");

    const double r_max = cfg.r_c0 * std::exp(cfg.r_c1 * cfg.radii.back());
    const detail::JointFwResult probe = detail::joint_block_fw(
        ds, cfg, cfg.radii.back(), r_max, ModelParams{Matrix(d, d), Vector(d)});
    TokenSelection alpha;
    for (std::size_t i = 0; i < ds.n(); ++i) {
        const Vector probs = attn_probs(probe.params.W, ds.samples[i]);
        std::size_t best = 0;
        for (std::size_t t = 1; t < probs.size(); ++t)
            if (probs[t] > probs[best]) best = t;
        alpha.idx.push_back(best);
    }
    sweep.alpha = alpha;

    const SvmSolution w_ref = solve_att_svm(ds, alpha, cfg.p);
    const SvmSolution v_ref = solve_v_svm(ds, alpha, cfg.p);
    sweep.reference_status = w_ref.status;
    if (w_ref.status == SvmStatus::Infeasible || v_ref.status == SvmStatus::Infeasible) {
        sweep.reference_status = SvmStatus::Infeasible;
        return sweep;
    }

    for (double R : cfg.radii) {
        const double r = cfg.r_c0 * std::exp(cfg.r_c1 * R);
        const detail::JointFwResult run = detail::joint_block_fw(
            ds, cfg, R, r, ModelParams{Matrix(d, d), Vector(d)});
        require(pq_norm(run.params.W, cfg.p) > 0.0 && lp_norm(run.params.v, cfg.p) > 0.0,
                "joint_rp: a block collapsed to zero (radius too small to move)");
        RpRow row;
        row.R = R;
        row.r = r;
        row.loss = run.loss;
        row.fw_gap = run.gap;
        row.w_dir_div = directional_bregman(pot, w_ref.W, run.params.W);
        row.v_dir_div = directional_bregman(pot, v_ref.v, run.params.v);
        sweep.rows.push_back(row);
    }
    return sweep;
}

}  // namespace attnmd
