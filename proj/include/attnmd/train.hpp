#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnmd/attention.hpp"
#include "attnmd/loss.hpp"
#include "attnmd/mirror.hpp"
#include "attnmd/rng.hpp"

namespace attnmd {

struct DivergedError : std::runtime_error {
    std::size_t iter;
    explicit DivergedError(std::size_t k)
        : std::runtime_error("training diverged: non-finite loss at iterate " + std::to_string(k)),
          iter(k) {}
};

struct InitMode {
    enum class Kind { NearZero, ConeSeed };
    Kind kind = Kind::NearZero;
    double scale = 1e-3;   // NearZero: entries uniform in [-scale, scale]; 0 gives exact zero
    Matrix reference;      // ConeSeed: seeded at radius * reference / ||reference||_{p,p}
    double radius = 8.0;

    static InitMode near_zero(double s = 1e-3) {
        InitMode m;
        m.kind = Kind::NearZero;
        m.scale = s;
        return m;
    }
    static InitMode cone_seed(Matrix ref, double r0 = 8.0) {
        InitMode m;
        m.kind = Kind::ConeSeed;
        m.reference = std::move(ref);
        m.radius = r0;
        return m;
    }
};

struct TrainConfig {
    double eta = 0.1;
    std::size_t max_iters = 1000;
    LossKind loss = LossKind::Logistic;
    bool normalize_grad = true;
    InitMode init;
    std::size_t record_every = 10;
    RngSeed seed{0};
    // Optional stepsize safeguard: halve eta when the loss increases, at most
    // 20 times per run. Off by default: normalized-gradient runs oscillate in
    // loss near convergence by design, and halving would freeze them.
    bool adaptive_eta = false;
    // When set, mean_opt_softmax tracks these tokens; otherwise the per-sample
    // argmax of the current softmax.
    std::optional<TokenSelection> selection;
    bool record_snapshots = false;
};

struct TrajectoryRecord {
    std::size_t iter = 0;
    double loss = 0.0;
    double pq_norm = 0.0;
    std::optional<double> dir_bregman;
    double mean_opt_softmax = 0.0;
    double mean_logistic_prob = 0.0;
};

struct Trajectory {
    std::vector<TrajectoryRecord> records;

    std::size_t size() const { return records.size(); }
    const TrajectoryRecord& back() const { return records.back(); }
};

inline std::string format_g17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline void write_csv(const Trajectory& traj, std::ostream& out) {
    out << "iter,loss,pq_norm,dir_bregman,mean_opt_softmax,mean_logistic_prob\n";
    for (const TrajectoryRecord& r : traj.records) {
        out << r.iter << ',' << format_g17(r.loss) << ',' << format_g17(r.pq_norm) << ',';
        if (r.dir_bregman) out << format_g17(*r.dir_bregman);
        out << ',' << format_g17(r.mean_opt_softmax) << ',' << format_g17(r.mean_logistic_prob)
            << '\n';
    }
}

inline void write_csv(const Trajectory& traj, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "write_csv: cannot open " + path);
    write_csv(traj, out);
}

inline Trajectory read_trajectory_csv(std::istream& in) {
    Trajectory traj;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        TrajectoryRecord r;
        std::getline(ss, field, ',');
        r.iter = std::stoul(field);
        std::getline(ss, field, ',');
        r.loss = std::stod(field);
        std::getline(ss, field, ',');
        r.pq_norm = std::stod(field);
        std::getline(ss, field, ',');
        if (!field.empty()) r.dir_bregman = std::stod(field);
        std::getline(ss, field, ',');
        r.mean_opt_softmax = std::stod(field);
        std::getline(ss, field, ',');
        r.mean_logistic_prob = std::stod(field);
        traj.records.push_back(r);
    }
    return traj;
}

namespace detail {

inline Matrix init_matrix(const InitMode& init, std::size_t d, double p, Rng& rng) {
    if (init.kind == InitMode::Kind::ConeSeed) {
        require(init.reference.rows == d && init.reference.cols == d,
                "init: cone-seed reference shape mismatch");
        const double norm = pq_norm(init.reference, p);
        require(norm > 0.0, "init: cone-seed reference is zero");
        return (init.radius / norm) * init.reference;
    }
    Matrix w(d, d);
    if (init.scale > 0.0)
        for (double& x : w.data) x = rng.next_uniform(-init.scale, init.scale);
    return w;
}

inline Vector init_vector(const InitMode& init, std::size_t d, Rng& rng) {
    Vector v(d);
    const double scale = init.kind == InitMode::Kind::NearZero ? init.scale : 1e-3;
    if (scale > 0.0)
        for (double& x : v.data) x = rng.next_uniform(-scale, scale);
    return v;
}

/// Loss plus both block gradients in one pass over the samples.
struct LossGrads {
    double loss = 0.0;
    Matrix gW;
    Vector gv;
};

inline LossGrads loss_and_grads(const ModelParams& params, const AttnDataset& ds, LossKind loss,
                                bool want_v) {
    const std::size_t d = params.W.rows;
    LossGrads out;
    out.gW = Matrix(d, d);
    out.gv = Vector(d);
    for (const AttnSample& smp : ds.samples) {
        const Vector s = attn_probs(params.W, smp);
        const Vector gamma = token_scores(params.v, smp);
        const double margin = dot(gamma, s);
        out.loss += loss_value(loss, margin);
        const double lp = loss_deriv(loss, margin);

        const double sg = dot(s, gamma);
        Vector u(s.size());
        for (std::size_t t = 0; t < s.size(); ++t) u[t] = s[t] * (gamma[t] - sg);
        const Vector xa = matvec_t(smp.X, u);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) out.gW(i, j) += lp * xa[i] * smp.z[j];

        if (want_v) {
            const Vector feats = matvec_t(smp.X, s);
            for (std::size_t j = 0; j < d; ++j) out.gv[j] += lp * smp.y * feats[j];
        }
    }
    const double inv_n = 1.0 / static_cast<double>(ds.n());
    out.loss *= inv_n;
    for (double& x : out.gW.data) x *= inv_n;
    for (double& x : out.gv.data) x *= inv_n;
    return out;
}

// Guard only against an exactly-zero (or denormal) gradient. Late in
// training the gradient norm decays like the non-optimal softmax mass,
// exp(-Theta(||W||)), and any sizable floor silently freezes the run while
// iterations keep counting.
inline void normalize_frobenius(Matrix& g) {
    const double norm = frobenius_norm(g);
    if (norm > 1e-300)
        for (double& x : g.data) x /= norm;
}

inline void normalize_euclidean(Vector& g) {
    const double norm = euclidean_norm(g);
    if (norm > 1e-300)
        for (double& x : g.data) x /= norm;
}

inline TrajectoryRecord make_record(std::size_t k, double loss, const ModelParams& params,
                                    const AttnDataset& ds, const Potential& pot,
                                    const Matrix* reference,
                                    const std::optional<TokenSelection>& sel) {
    TrajectoryRecord r;
    r.iter = k;
    r.loss = loss;
    r.pq_norm = pq_norm(params.W, pot.p);
    if (reference != nullptr && r.pq_norm > 0.0)
        r.dir_bregman = directional_bregman(pot, *reference, params.W);
    double opt_prob = 0.0;
    double logit_prob = 0.0;
    for (std::size_t i = 0; i < ds.n(); ++i) {
        const AttnSample& smp = ds.samples[i];
        const Vector s = attn_probs(params.W, smp);
        double prob = 0.0;
        if (sel) {
            prob = s[(*sel)[i]];
        } else {
            for (double x : s.data) prob = std::max(prob, x);
        }
        opt_prob += prob;
        const double yf = smp.y * dot(params.v, matvec_t(smp.X, s));
        logit_prob += 1.0 / (1.0 + std::exp(-yf));
    }
    r.mean_opt_softmax = opt_prob / static_cast<double>(ds.n());
    r.mean_logistic_prob = logit_prob / static_cast<double>(ds.n());
    return r;
}

}  // namespace detail

struct TrainResult {
    Matrix W;
    Trajectory trajectory;
    std::vector<Matrix> snapshots;  // filled when cfg.record_snapshots
    double final_eta = 0.0;
};

struct JointTrainResult {
    ModelParams params;
    Trajectory trajectory;
    std::vector<ModelParams> snapshots;
    double final_eta = 0.0;
};

/// lp-mirror-descent training of W with the head v held fixed.
inline TrainResult train_attention(const AttnDataset& ds, const Vector& v, const Potential& pot,
                                   const TrainConfig& cfg, const Matrix* reference = nullptr) {
    validate(ds);
    require(cfg.eta > 0.0, "train_attention: eta must be positive");
    require(v.size() == ds.d(), "train_attention: v length mismatch");

    Rng rng(cfg.seed);
    ModelParams params;
    params.W = detail::init_matrix(cfg.init, ds.d(), pot.p, rng);
    params.v = v;

    TrainResult result;
    double eta = cfg.eta;
    int halvings = 0;
    double prev_loss = std::numeric_limits<double>::infinity();

    const auto record = [&](std::size_t k, double loss) {
        result.trajectory.records.push_back(
            detail::make_record(k, loss, params, ds, pot, reference, cfg.selection));
        if (cfg.record_snapshots) result.snapshots.push_back(params.W);
    };

    for (std::size_t k = 0; k <= cfg.max_iters; ++k) {
        detail::LossGrads lg = detail::loss_and_grads(params, ds, cfg.loss, false);
        if (!std::isfinite(lg.loss)) throw DivergedError(k);
        if (cfg.adaptive_eta && lg.loss > prev_loss && halvings < 20) {
            eta *= 0.5;
            ++halvings;
        }
        prev_loss = lg.loss;
        if (k % cfg.record_every == 0 || k == cfg.max_iters) record(k, lg.loss);
        if (k == cfg.max_iters) break;
        if (cfg.normalize_grad) detail::normalize_frobenius(lg.gW);
        params.W = lp_attgd_step(params.W, lg.gW, pot, eta);
    }

    result.W = params.W;
    result.final_eta = eta;
    return result;
}

/// Joint lp-mirror-descent training of (W, v) with shared stepsize.
inline JointTrainResult train_joint(const AttnDataset& ds, const Potential& pot,
                                    const TrainConfig& cfg, const Matrix* reference = nullptr) {
    validate(ds);
    require(cfg.eta > 0.0, "train_joint: eta must be positive");

    Rng rng(cfg.seed);
    ModelParams params;
    params.W = detail::init_matrix(cfg.init, ds.d(), pot.p, rng);
    params.v = detail::init_vector(cfg.init, ds.d(), rng);

    JointTrainResult result;
    double eta = cfg.eta;
    int halvings = 0;
    double prev_loss = std::numeric_limits<double>::infinity();

    const auto record = [&](std::size_t k, double loss) {
        result.trajectory.records.push_back(
            detail::make_record(k, loss, params, ds, pot, reference, cfg.selection));
        if (cfg.record_snapshots) result.snapshots.push_back(params);
    };

    for (std::size_t k = 0; k <= cfg.max_iters; ++k) {
        detail::LossGrads lg = detail::loss_and_grads(params, ds, cfg.loss, true);
        if (!std::isfinite(lg.loss)) throw DivergedError(k);
        if (cfg.adaptive_eta && lg.loss > prev_loss && halvings < 20) {
            eta *= 0.5;
            ++halvings;
        }
        prev_loss = lg.loss;
        if (k % cfg.record_every == 0 || k == cfg.max_iters) record(k, lg.loss);
        if (k == cfg.max_iters) break;
        if (cfg.normalize_grad) {
            detail::normalize_frobenius(lg.gW);
            detail::normalize_euclidean(lg.gv);
        }
        params = lp_jointgd_step(params, lg.gW, lg.gv, pot, eta, eta);
    }

    result.params = params;
    result.final_eta = eta;
    return result;
}

}  // namespace attnmd
