#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnmd/rng.hpp"
#include "attnmd/svg.hpp"
#include "attnmd/svm.hpp"
#include "attnmd/train.hpp"

namespace attnmd {

/// Random dataset plus fixed head: token rows, comparison tokens and v all on
/// the unit sphere, labels uniform +-1. Deterministic per seed.
inline std::pair<AttnDataset, Vector> gen_synthetic(std::size_t n, std::size_t T, std::size_t d,
                                                    RngSeed seed) {
    require(d >= 1, "gen_synthetic: d must be at least 1");
    require(T >= 2, "gen_synthetic: T must be at least 2");
    require(n >= 1, "gen_synthetic: n must be at least 1");
    Rng rng(seed);
    AttnDataset ds;
    for (std::size_t i = 0; i < n; ++i) {
        AttnSample s;
        s.X = Matrix(T, d);
        for (std::size_t t = 0; t < T; ++t) {
            const Vector row = unit_sphere_vector(d, rng);
            for (std::size_t a = 0; a < d; ++a) s.X(t, a) = row[a];
        }
        s.z = unit_sphere_vector(d, rng);
        s.y = rng.next_sign();
        ds.samples.push_back(std::move(s));
    }
    const Vector v = unit_sphere_vector(d, rng);
    return {std::move(ds), v};
}

/// Two samples, two 2-d tokens each; the comparison token is the first token
/// and the first token is the selected one. A single effective margin
/// constraint, handy for closed-form checks.
inline std::pair<AttnDataset, TokenSelection> example1_dataset() {
    AttnDataset ds;
    AttnSample s1;
    s1.X = Matrix(2, 2, {5.0, 0.0, 0.0, 1.0});
    s1.y = 1;
    s1.z = Vector{5.0, 0.0};
    AttnSample s2;
    s2.X = Matrix(2, 2, {-5.0, 0.0, 0.0, -1.0});
    s2.y = -1;
    s2.z = Vector{-5.0, 0.0};
    ds.samples = {std::move(s1), std::move(s2)};
    TokenSelection alpha;
    alpha.idx = {0, 0};
    return {std::move(ds), alpha};
}

/// The joint-training example: two samples with three 2-d tokens each.
inline AttnDataset example2_dataset() {
    AttnDataset ds;
    AttnSample s1;
    s1.X = Matrix(3, 2, {-5.4, 2.4, 2.8, 4.2, 2.6, -0.2});
    s1.y = 1;
    s1.z = Vector{-5.4, 2.4};
    AttnSample s2;
    s2.X = Matrix(3, 2, {0.8, -4.4, -2.2, -0.8, 1.8, 0.2});
    s2.y = -1;
    s2.z = Vector{0.8, -4.4};
    ds.samples = {std::move(s1), std::move(s2)};
    return ds;
}

/// Compact label for a p value, used in directory names and legends.
inline std::string p_name_short(double p) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%g", p);
    return buf;
}

/// Appendix iteration budgets per potential exponent.
inline std::size_t default_iters_for_p(double p) {
    if (std::fabs(p - 1.75) < 1e-9) return 1500;
    if (std::fabs(p - 2.0) < 1e-9) return 2000;
    if (std::fabs(p - 3.0) < 1e-9) return 20000;
    return 2000;
}

struct FitReport {
    enum class Tag { LogGrowth, RateEnvelope };
    Tag tag = Tag::LogGrowth;
    double slope = 0.0;      // LogGrowth: fitted a in a*log(k)+b
    double intercept = 0.0;  // LogGrowth: fitted b
    double envelope_c = 0.0;  // RateEnvelope: fitted C
    double residual = 0.0;
    bool pass = false;
    std::string detail;
};

/// Fit ||W(k)||_{p,p} ~ a log k + b over the tail half of the records.
/// Passes when the slope is positive and every point sits within 20% of
/// a log k of the fit.
inline FitReport fit_log_growth(const Trajectory& traj) {
    std::vector<std::pair<double, double>> pts;  // (log k, norm)
    for (const TrajectoryRecord& r : traj.records)
        if (r.iter >= 10) pts.emplace_back(std::log(static_cast<double>(r.iter)), r.pq_norm);
    require(pts.size() >= 100, "fit_log_growth: too-short trajectory (needs >= 50 tail records)");
    const std::size_t start = pts.size() / 2;

    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double m = static_cast<double>(pts.size() - start);
    for (std::size_t i = start; i < pts.size(); ++i) {
        sx += pts[i].first;
        sy += pts[i].second;
        sxx += pts[i].first * pts[i].first;
        sxy += pts[i].first * pts[i].second;
    }
    const double denom = m * sxx - sx * sx;
    FitReport rep;
    rep.tag = FitReport::Tag::LogGrowth;
    rep.slope = (m * sxy - sx * sy) / denom;
    rep.intercept = (sy - rep.slope * sx) / m;

    bool within = true;
    double worst = 0.0;
    for (std::size_t i = start; i < pts.size(); ++i) {
        const double fit = rep.slope * pts[i].first + rep.intercept;
        const double resid = std::fabs(pts[i].second - fit);
        const double budget = 0.2 * rep.slope * pts[i].first;
        if (rep.slope > 0.0) worst = std::max(worst, resid / (rep.slope * pts[i].first));
        if (!(resid < budget)) within = false;
    }
    rep.residual = worst;
    // slope must be positive beyond double-precision noise on the fit scale
    const double slope_floor = 1e-12 * std::max(1.0, std::fabs(rep.intercept));
    rep.pass = rep.slope > slope_floor && within;
    return rep;
}

/// Theoretical decay envelope for the directional divergence.
inline double rate_envelope(double p, double k) {
    const double lk = std::log(k);
    const double llk = std::log(lk);
    if (p > 2.0 + 1e-12) return llk / lk;
    if (p >= 2.0 - 1e-12) return llk * llk / lk;
    return std::pow(lk, 1.0 - p);
}

/// Envelope check of the recorded divergence series: fits
/// C = max div(k)/rate_p(k) over the tail and requires the tail to stay under
/// 1.05 C rate_p(k) while nonincreasing (1e-6 slack).
inline FitReport rate_envelope_check(const Trajectory& traj, double p) {
    std::vector<std::pair<double, double>> pts;  // (k, div)
    for (const TrajectoryRecord& r : traj.records)
        if (r.iter >= 10 && r.dir_bregman) pts.emplace_back(static_cast<double>(r.iter), *r.dir_bregman);
    require(!pts.empty(), "rate_envelope_check: missing divergence series (no reference)");
    const std::size_t start = pts.size() / 2;

    FitReport rep;
    rep.tag = FitReport::Tag::RateEnvelope;
    double c = 0.0;
    for (std::size_t i = start; i < pts.size(); ++i)
        c = std::max(c, pts[i].second / rate_envelope(p, pts[i].first));
    rep.envelope_c = c;

    bool bounded = true;
    bool monotone = true;
    double worst_increase = 0.0;
    for (std::size_t i = start; i < pts.size(); ++i) {
        if (pts[i].second > 1.05 * c * rate_envelope(p, pts[i].first)) bounded = false;
        if (i > start) {
            const double inc = pts[i].second - pts[i - 1].second;
            worst_increase = std::max(worst_increase, inc);
            if (inc > 1e-6) monotone = false;
        }
    }
    rep.residual = worst_increase;
    rep.pass = bounded && monotone;
    rep.detail = monotone ? "tail nonincreasing" : "tail increased";
    return rep;
}

// --- fig-corr: cross-p divergence matrix ----------------------------------

struct ExperimentSpec {
    std::string name = "fig-corr";
    std::size_t trials = 20;
    std::size_t n = 6;
    std::size_t T = 8;
    std::size_t d = 10;
    std::vector<double> ps = {1.75, 2.0, 3.0};
    double eta = 0.1;
    bool normalize_grad = true;
    LossKind loss = LossKind::Logistic;
    RngSeed seed{1};
    std::size_t record_every = 10;
    std::string out_dir;  // empty: no files written
};

struct FigCorrSeries {
    std::vector<std::size_t> iters;
    std::vector<double> mean;
    std::vector<double> stddev;
};

struct FigCorrResult {
    std::vector<double> ps;
    // series[path_p][ref_q], aligned record grids
    std::vector<std::vector<FigCorrSeries>> series;
    std::vector<std::vector<double>> terminal_mean;  // [path][ref]
    std::vector<std::size_t> dominance_count;        // trials where matched < all mismatched
    std::size_t completed_trials = 0;
    std::size_t skipped_trials = 0;
    std::vector<Trajectory> sample_trajectories;  // trial 0, one per path p
};

/// One full training path plus its self-selected token references: trains
/// with snapshots, selects the highest-softmax token per sample from the
/// final state (the selection protocol), solves the matched SVM, and
/// back-fills the trajectory's divergence and opt-token columns.
struct PathRun {
    TrainResult train;
    TokenSelection alpha;
    SvmSolution reference;
};

inline PathRun run_reference_path(const AttnDataset& ds, const Vector& v, double p,
                                  TrainConfig cfg) {
    const Potential pot(p);
    cfg.record_snapshots = true;
    PathRun run;
    run.train = train_attention(ds, v, pot, cfg);
    for (std::size_t i = 0; i < ds.n(); ++i) {
        const Vector probs = attn_probs(run.train.W, ds.samples[i]);
        std::size_t best = 0;
        for (std::size_t t = 1; t < probs.size(); ++t)
            if (probs[t] > probs[best]) best = t;
        run.alpha.idx.push_back(best);
    }
    run.reference = solve_att_svm(ds, run.alpha, p);
    if (run.reference.status == SvmStatus::Optimal) {
        for (std::size_t r = 0; r < run.train.trajectory.size(); ++r) {
            TrajectoryRecord& rec = run.train.trajectory.records[r];
            const Matrix& w = run.train.snapshots[r];
            if (rec.pq_norm > 0.0)
                rec.dir_bregman = directional_bregman(pot, run.reference.W, w);
            double opt = 0.0;
            for (std::size_t i = 0; i < ds.n(); ++i)
                opt += attn_probs(w, ds.samples[i])[run.alpha[i]];
            rec.mean_opt_softmax = opt / static_cast<double>(ds.n());
        }
    }
    return run;
}

namespace detail {

struct TrialOutput {
    bool skipped = false;
    // div[path][ref][record]
    std::vector<std::vector<std::vector<double>>> div;
    std::vector<std::size_t> iters;
    std::vector<Trajectory> trajectories;
};

inline TrialOutput run_fig_corr_trial(const ExperimentSpec& spec, std::size_t trial) {
    TrialOutput out;
    const RngSeed trial_seed{spec.seed.seed ^ static_cast<std::uint64_t>(trial)};
    auto [ds, v] = gen_synthetic(spec.n, spec.T, spec.d, trial_seed);

    // all paths first: each selects its own tokens at the end of training
    std::vector<PathRun> runs;
    for (double p : spec.ps) {
        TrainConfig cfg;
        cfg.eta = spec.eta;
        cfg.max_iters = default_iters_for_p(p);
        cfg.loss = spec.loss;
        cfg.normalize_grad = spec.normalize_grad;
        cfg.init = InitMode::near_zero(1e-3);
        cfg.seed = trial_seed;
        cfg.record_every = spec.record_every;
        PathRun run = run_reference_path(ds, v, p, cfg);
        if (run.reference.status != SvmStatus::Optimal) {
            out.skipped = true;
            return out;
        }
        runs.push_back(std::move(run));
    }

    out.div.resize(spec.ps.size());
    for (std::size_t pi = 0; pi < spec.ps.size(); ++pi) {
        const Potential pot(spec.ps[pi]);
        out.trajectories.push_back(runs[pi].train.trajectory);
        out.div[pi].resize(spec.ps.size());
        for (std::size_t qi = 0; qi < spec.ps.size(); ++qi) {
            out.div[pi][qi].reserve(runs[pi].train.snapshots.size());
            const Matrix& ref_w = runs[qi].reference.W;
            for (const Matrix& w : runs[pi].train.snapshots)
                out.div[pi][qi].push_back(directional_bregman(pot, ref_w, w));
        }
        if (pi == 0 || out.iters.empty()) {
            out.iters.clear();
            for (const TrajectoryRecord& r : runs[pi].train.trajectory.records)
                out.iters.push_back(r.iter);
        }
    }
    return out;
}

}  // namespace detail

/// Cross-p reproduction: for every (path p, reference q) pair, the mean and
/// std of the directional Bregman divergence across trials. Infeasible trials
/// are skipped and counted.
inline FigCorrResult run_fig_corr(const ExperimentSpec& spec) {
    require(!spec.ps.empty(), "run_fig_corr: empty p list");
    require(spec.trials >= 1, "run_fig_corr: needs at least one trial");

    std::vector<std::future<detail::TrialOutput>> futures;
    futures.reserve(spec.trials);
    for (std::size_t trial = 0; trial < spec.trials; ++trial)
        futures.push_back(std::async(std::launch::async, detail::run_fig_corr_trial, spec, trial));

    FigCorrResult result;
    result.ps = spec.ps;
    std::vector<detail::TrialOutput> outputs;
    for (auto& f : futures) outputs.push_back(f.get());

    const std::size_t np = spec.ps.size();
    result.dominance_count.assign(np, 0);
    std::vector<detail::TrialOutput*> kept;
    for (auto& o : outputs) {
        if (o.skipped)
            ++result.skipped_trials;
        else
            kept.push_back(&o);
    }
    result.completed_trials = kept.size();
    require(!kept.empty(), "run_fig_corr: every trial was infeasible");
    result.sample_trajectories = kept.front()->trajectories;

    result.series.assign(np, std::vector<FigCorrSeries>(np));
    result.terminal_mean.assign(np, std::vector<double>(np, 0.0));
    for (std::size_t pi = 0; pi < np; ++pi) {
        // per-path record grids differ (budgets differ); take grid from div sizes
        const std::size_t n_rec = kept.front()->div[pi][0].size();
        for (std::size_t qi = 0; qi < np; ++qi) {
            FigCorrSeries& s = result.series[pi][qi];
            s.mean.assign(n_rec, 0.0);
            s.stddev.assign(n_rec, 0.0);
            for (const auto* o : kept)
                for (std::size_t r = 0; r < n_rec; ++r) s.mean[r] += o->div[pi][qi][r];
            for (double& x : s.mean) x /= static_cast<double>(kept.size());
            for (const auto* o : kept)
                for (std::size_t r = 0; r < n_rec; ++r) {
                    const double dlt = o->div[pi][qi][r] - s.mean[r];
                    s.stddev[r] += dlt * dlt;
                }
            for (double& x : s.stddev) x = std::sqrt(x / static_cast<double>(kept.size()));
            result.terminal_mean[pi][qi] = s.mean.back();
        }
        // shared iteration grid for this path
        const std::size_t budget = default_iters_for_p(spec.ps[pi]);
        FigCorrSeries& first = result.series[pi][0];
        first.iters.clear();
        for (std::size_t k = 0, r = 0; r < n_rec; ++r, k += spec.record_every)
            first.iters.push_back(std::min(k, budget));
        for (std::size_t qi = 1; qi < np; ++qi) result.series[pi][qi].iters = first.iters;
        // per-trial matched dominance
        for (const auto* o : kept) {
            bool dominant = true;
            for (std::size_t qi = 0; qi < np; ++qi)
                if (qi != pi && o->div[pi][pi].back() >= o->div[pi][qi].back()) dominant = false;
            if (dominant) ++result.dominance_count[pi];
        }
    }

    if (!spec.out_dir.empty()) {
        namespace fs = std::filesystem;
        const fs::path root = fs::path(spec.out_dir) / spec.name;
        nlohmann::json summary;
        summary["trials"] = result.completed_trials;
        summary["skipped"] = result.skipped_trials;
        for (std::size_t pi = 0; pi < np; ++pi) {
            const std::string p_name = p_name_short(spec.ps[pi]);
            const fs::path dir = root / p_name;
            fs::create_directories(dir);
            write_csv(result.sample_trajectories[pi], (dir / "trajectory.csv").string());

            std::ofstream csv(dir / "divergence.csv");
            csv << "iter";
            for (std::size_t qi = 0; qi < np; ++qi)
                csv << ",ref" << p_name_short(spec.ps[qi]) << "_mean,ref"
                    << p_name_short(spec.ps[qi]) << "_std";
            csv << '\n';
            const FigCorrSeries& grid = result.series[pi][0];
            for (std::size_t r = 0; r < grid.iters.size(); ++r) {
                csv << grid.iters[r];
                for (std::size_t qi = 0; qi < np; ++qi)
                    csv << ',' << format_g17(result.series[pi][qi].mean[r]) << ','
                        << format_g17(result.series[pi][qi].stddev[r]);
                csv << '\n';
            }

            std::vector<SvgSeries> plot;
            for (std::size_t qi = 0; qi < np; ++qi) {
                SvgSeries s;
                s.name = "ref p=" + p_name_short(spec.ps[qi]);
                for (std::size_t r = 0; r < grid.iters.size(); ++r) {
                    if (grid.iters[r] == 0) continue;  // log-x
                    s.x.push_back(static_cast<double>(grid.iters[r]));
                    s.y.push_back(result.series[pi][qi].mean[r]);
                    s.err.push_back(result.series[pi][qi].stddev[r]);
                }
                plot.push_back(std::move(s));
            }
            SvgStyle style;
            style.log_x = true;
            style.title = "directional Bregman divergence, path p=" + p_name_short(spec.ps[pi]);
            style.x_label = "iteration";
            style.y_label = "divergence";
            std::ofstream svg(dir / "plot.svg");
            svg << emit_svg(plot, style);

            nlohmann::json row;
            for (std::size_t qi = 0; qi < np; ++qi)
                row[p_name_short(spec.ps[qi])] = result.terminal_mean[pi][qi];
            summary["terminal"][p_name_short(spec.ps[pi])] = row;
            summary["dominance_count"][p_name_short(spec.ps[pi])] = result.dominance_count[pi];
        }
        fs::create_directories(root);
        std::ofstream js(root / "summary.json");
        js << summary.dump(2) << '\n';
    }
    return result;
}

}  // namespace attnmd
