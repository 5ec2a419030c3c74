// Command-line driver: dataset generation, SVM solves, mirror-descent
// training, regularization-path sweeps, and the convergence-law checkers.
//
// Exit codes: 0 success, 1 usage error, 2 infeasible, 3 divergence/maxiter
// or a failed convergence check.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "attnmd/attnmd.hpp"

namespace fs = std::filesystem;
using namespace attnmd;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitInfeasible = 2;
constexpr int kExitDiverged = 3;

struct CommonOpts {
    double p = 2.0;
    double eta = 0.1;
    std::optional<std::size_t> iters;
    std::uint64_t seed = 1;
    std::string loss = "logistic";
    std::string normalize = "on";
    std::string out;
    std::string format = "csv";
    std::size_t n = 6, T = 8, d = 10;
    int example = 0;       // 0: synthetic/file
    std::string data_file;
};

LossKind parse_loss(const std::string& s) {
    if (s == "exp") return LossKind::Exponential;
    if (s == "logistic") return LossKind::Logistic;
    throw CLI::ValidationError("--loss must be exp or logistic");
}

void add_common(CLI::App* cmd, CommonOpts& o, bool with_dataset = true) {
    cmd->add_option("--p", o.p, "potential exponent (> 1)");
    cmd->add_option("--eta", o.eta, "stepsize");
    cmd->add_option("--iters", o.iters, "iteration budget (default depends on p)");
    cmd->add_option("--seed", o.seed, "rng seed (ATTN_MIRROR_SEED overrides)");
    cmd->add_option("--loss", o.loss, "exp|logistic")->check(CLI::IsMember({"exp", "logistic"}));
    cmd->add_option("--normalize-grad", o.normalize, "on|off")
        ->check(CLI::IsMember({"on", "off"}));
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--format", o.format, "csv|json|svg stdout format")
        ->check(CLI::IsMember({"csv", "json", "svg"}));
    if (with_dataset) {
        cmd->add_option("--example", o.example, "use a built-in example dataset (1 or 2)");
        cmd->add_option("--data", o.data_file, "dataset JSON file");
        cmd->add_option("--n", o.n, "synthetic sample count");
        cmd->add_option("--T", o.T, "synthetic tokens per sample");
        cmd->add_option("--d", o.d, "synthetic embedding dimension");
    }
}

void apply_env_seed(CommonOpts& o) {
    if (const char* env = std::getenv("ATTN_MIRROR_SEED"); env != nullptr && *env != '\0')
        o.seed = std::strtoull(env, nullptr, 10);
}

/// Dataset plus fixed head per the option set. The head comes with the
/// synthetic draw; for examples and files it is seeded from the sphere.
std::pair<AttnDataset, Vector> resolve_dataset(const CommonOpts& o) {
    if (o.example == 1) {
        auto [ds, alpha] = example1_dataset();
        return {std::move(ds), Vector{1.0, 0.0}};
    }
    if (o.example == 2) {
        Rng rng(RngSeed{o.seed});
        AttnDataset ds = example2_dataset();
        Vector v = unit_sphere_vector(ds.d(), rng);
        return {std::move(ds), std::move(v)};
    }
    if (!o.data_file.empty()) {
        AttnDataset ds = load_dataset(o.data_file);
        Rng rng(RngSeed{o.seed});
        Vector v = unit_sphere_vector(ds.d(), rng);
        return {std::move(ds), std::move(v)};
    }
    return gen_synthetic(o.n, o.T, o.d, RngSeed{o.seed});
}

void emit_trajectory_outputs(const Trajectory& traj, const CommonOpts& o,
                             const std::string& experiment) {
    if (!o.out.empty()) {
        const fs::path dir = fs::path(o.out) / experiment / p_name_short(o.p);
        fs::create_directories(dir);
        write_csv(traj, (dir / "trajectory.csv").string());

        nlohmann::json summary;
        summary["p"] = o.p;
        summary["records"] = traj.size();
        summary["final_loss"] = traj.back().loss;
        summary["final_pq_norm"] = traj.back().pq_norm;
        summary["final_mean_opt_softmax"] = traj.back().mean_opt_softmax;
        summary["final_mean_logistic_prob"] = traj.back().mean_logistic_prob;
        if (traj.back().dir_bregman) summary["final_dir_bregman"] = *traj.back().dir_bregman;
        std::ofstream js(dir / "summary.json");
        js << summary.dump(2) << '\n';

        SvgSeries loss_series;
        loss_series.name = "loss";
        SvgSeries norm_series;
        norm_series.name = "pq_norm";
        for (const TrajectoryRecord& r : traj.records) {
            if (r.iter == 0) continue;
            loss_series.x.push_back(static_cast<double>(r.iter));
            loss_series.y.push_back(r.loss);
            norm_series.x.push_back(static_cast<double>(r.iter));
            norm_series.y.push_back(r.pq_norm);
        }
        SvgStyle style;
        style.log_x = true;
        style.title = experiment + " p=" + p_name_short(o.p);
        style.x_label = "iteration";
        std::ofstream svg(dir / "plot.svg");
        svg << emit_svg({loss_series, norm_series}, style);
    }
    if (o.format == "csv") {
        write_csv(traj, std::cout);
    } else if (o.format == "json") {
        nlohmann::json j;
        j["final_loss"] = traj.back().loss;
        j["final_pq_norm"] = traj.back().pq_norm;
        j["final_mean_opt_softmax"] = traj.back().mean_opt_softmax;
        j["final_mean_logistic_prob"] = traj.back().mean_logistic_prob;
        if (traj.back().dir_bregman) j["final_dir_bregman"] = *traj.back().dir_bregman;
        std::cout << j.dump(2) << '\n';
    } else {
        SvgSeries s;
        s.name = "loss";
        for (const TrajectoryRecord& r : traj.records) {
            if (r.iter == 0) continue;
            s.x.push_back(static_cast<double>(r.iter));
            s.y.push_back(r.loss);
        }
        SvgStyle style;
        style.log_x = true;
        std::cout << emit_svg({s}, style);
    }
}

int cmd_gen(const CommonOpts& o) {
    auto [ds, v] = gen_synthetic(o.n, o.T, o.d, RngSeed{o.seed});
    if (!o.out.empty()) {
        fs::create_directories(o.out);
        save_dataset(ds, (fs::path(o.out) / "dataset.json").string());
    } else {
        std::cout << to_json(ds).dump(2) << '\n';
    }
    return kExitOk;
}

int cmd_svm(const CommonOpts& o, const std::string& alpha_csv, bool head) {
    auto [ds, v] = resolve_dataset(o);
    TokenSelection alpha;
    if (!alpha_csv.empty()) {
        std::stringstream ss(alpha_csv);
        std::string tok;
        while (std::getline(ss, tok, ',')) alpha.idx.push_back(std::stoul(tok));
    } else if (o.example == 1 || o.example == 2) {
        alpha.idx.assign(ds.n(), 0);  // the examples select the first token
    } else {
        alpha = globally_optimal_tokens(v, ds);
    }

    const SvmSolution sol = head ? solve_v_svm(ds, alpha, o.p) : solve_att_svm(ds, alpha, o.p);
    std::cout << to_json(sol).dump(2) << '\n';
    if (!o.out.empty()) {
        const fs::path dir = fs::path(o.out) / "svm" / p_name_short(o.p);
        fs::create_directories(dir);
        std::ofstream js(dir / "solution.json");
        js << to_json(sol).dump(2) << '\n';
    }
    if (sol.status == SvmStatus::Infeasible) return kExitInfeasible;
    if (sol.status == SvmStatus::MaxIter) return kExitDiverged;
    return kExitOk;
}

int cmd_train(const CommonOpts& o) {
    auto [ds, v] = resolve_dataset(o);

    TrainConfig cfg;
    cfg.eta = o.eta;
    cfg.max_iters = o.iters.value_or(default_iters_for_p(o.p));
    cfg.loss = parse_loss(o.loss);
    cfg.normalize_grad = o.normalize == "on";
    cfg.init = InitMode::near_zero(1e-3);
    cfg.seed = RngSeed{o.seed};
    const PathRun run = run_reference_path(ds, v, o.p, cfg);
    emit_trajectory_outputs(run.train.trajectory, o, "train");
    return kExitOk;
}

int cmd_joint(const CommonOpts& o) {
    CommonOpts opts = o;
    if (opts.example == 0 && opts.data_file.empty()) opts.example = 2;
    auto [ds, v_unused] = resolve_dataset(opts);
    const Potential pot(opts.p);

    TrainConfig cfg;
    cfg.eta = opts.eta;
    cfg.max_iters = opts.iters.value_or(default_iters_for_p(opts.p));
    cfg.loss = parse_loss(opts.loss);
    cfg.normalize_grad = opts.normalize == "on";
    cfg.init = InitMode::near_zero(0.0);
    cfg.seed = RngSeed{opts.seed};
    const JointTrainResult r = train_joint(ds, pot, cfg);
    emit_trajectory_outputs(r.trajectory, opts, "joint");
    return kExitOk;
}

int cmd_rp(const CommonOpts& o, const std::string& radii_csv, bool joint, double r_c0,
           double r_c1) {
    CommonOpts opts = o;
    if (joint && opts.example == 0 && opts.data_file.empty()) opts.example = 2;
    auto [ds, v] = resolve_dataset(opts);

    RpConfig cfg;
    cfg.p = opts.p;
    cfg.loss = parse_loss(opts.loss);
    cfg.joint = joint;
    cfg.r_c0 = r_c0;
    cfg.r_c1 = r_c1;
    cfg.seed = RngSeed{opts.seed};
    if (opts.iters) cfg.fw_iters = *opts.iters;
    std::stringstream ss(radii_csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) cfg.radii.push_back(std::stod(tok));

    const RpSweep sweep = joint ? joint_rp(ds, cfg) : rp_sweep(ds, v, cfg);
    if (sweep.reference_status == SvmStatus::Infeasible) {
        std::cerr << "rp: SVM reference infeasible for the selected tokens\n";
        return kExitInfeasible;
    }
    if (!opts.out.empty()) {
        const fs::path dir = fs::path(opts.out) / (joint ? "rp-joint" : "rp") /
                             p_name_short(opts.p);
        fs::create_directories(dir);
        write_csv(sweep, (dir / "sweep.csv").string());
    }
    write_csv(sweep, std::cout);
    return kExitOk;
}

int cmd_fig_corr(const CommonOpts& o, std::size_t trials) {
    ExperimentSpec spec;
    spec.trials = trials;
    spec.n = o.n;
    spec.T = o.T;
    spec.d = o.d;
    spec.eta = o.eta;
    spec.normalize_grad = o.normalize == "on";
    spec.loss = parse_loss(o.loss);
    spec.seed = RngSeed{o.seed};
    spec.out_dir = o.out;
    const FigCorrResult result = run_fig_corr(spec);

    nlohmann::json j;
    j["completed_trials"] = result.completed_trials;
    j["skipped_trials"] = result.skipped_trials;
    for (std::size_t pi = 0; pi < result.ps.size(); ++pi) {
        nlohmann::json row;
        for (std::size_t qi = 0; qi < result.ps.size(); ++qi)
            row[p_name_short(result.ps[qi])] = result.terminal_mean[pi][qi];
        j["terminal"][p_name_short(result.ps[pi])] = row;
        j["dominance_count"][p_name_short(result.ps[pi])] = result.dominance_count[pi];
    }
    std::cout << j.dump(2) << '\n';
    return kExitOk;
}

int cmd_gradcheck(const CommonOpts& o) {
    double worst = 0.0;
    for (std::uint64_t k = 0; k < 20; ++k) {
        const std::uint64_t seed = o.seed + k;
        Rng rng(RngSeed{seed});
        const std::size_t d = 2 + seed % 5;
        const std::size_t T = 2 + seed % 3;
        const std::size_t n = 1 + seed % 3;
        auto [ds, v_unused] = gen_synthetic(n, T, d, RngSeed{seed * 31 + 7});
        ModelParams params{Matrix(d, d), Vector(d)};
        for (double& x : params.W.data) x = rng.next_gaussian();
        for (double& x : params.v.data) x = rng.next_gaussian();
        const LossKind loss = k % 2 == 0 ? LossKind::Logistic : LossKind::Exponential;

        const Matrix gw = grad_W(params, ds, loss);
        const auto f_w = [&](const std::vector<double>& flat) {
            ModelParams p = params;
            p.W.data = flat;
            return erm_objective(p, ds, loss);
        };
        const std::vector<double> fd_w = finite_diff_grad(f_w, params.W.data);
        const Vector gv = grad_v(params, ds, loss);
        const auto f_v = [&](const std::vector<double>& flat) {
            ModelParams p = params;
            p.v.data = flat;
            return erm_objective(p, ds, loss);
        };
        const std::vector<double> fd_v = finite_diff_grad(f_v, params.v.data);

        const auto rel = [](const std::vector<double>& a, const std::vector<double>& b) {
            double scale = 0.0, err = 0.0;
            for (double x : b) scale = std::max(scale, std::fabs(x));
            for (std::size_t i = 0; i < a.size(); ++i)
                err = std::max(err, std::fabs(a[i] - b[i]));
            // relative with an absolute floor: below ~1e-2 gradient scale the
            // central-difference oracle resolves only its own roundoff
            return err / std::max(scale, 1e-2);
        };
        worst = std::max({worst, rel(fd_w, gw.data), rel(fd_v, gv.data)});
    }
    std::cout << "gradcheck: max relative error " << worst << " over 20 instances\n";
    return worst < 1e-5 ? kExitOk : kExitDiverged;
}

int cmd_check(const CommonOpts& o, const std::string& what) {
    auto [ds, v] = resolve_dataset(o);

    TrainConfig cfg;
    cfg.eta = o.eta;
    cfg.max_iters = o.iters.value_or(default_iters_for_p(o.p));
    cfg.loss = parse_loss(o.loss);
    cfg.normalize_grad = false;  // theory checks run on raw gradients
    cfg.init = InitMode::near_zero(1e-3);
    cfg.seed = RngSeed{o.seed};
    const PathRun run = run_reference_path(ds, v, o.p, cfg);
    if (run.reference.status == SvmStatus::Infeasible) {
        std::cerr << "check: SVM reference infeasible\n";
        return kExitInfeasible;
    }
    const Trajectory& traj = run.train.trajectory;

    if (what == "growth") {
        const FitReport rep = fit_log_growth(traj);
        std::cout << "log-growth fit: slope " << rep.slope << ", intercept " << rep.intercept
                  << ", worst relative residual " << rep.residual << " -> "
                  << (rep.pass ? "PASS" : "FAIL") << '\n';
        return rep.pass ? kExitOk : kExitDiverged;
    }
    const FitReport rep = rate_envelope_check(traj, o.p);
    std::cout << "rate envelope: C " << rep.envelope_c << ", worst tail increase "
              << rep.residual << " (" << rep.detail << ") -> " << (rep.pass ? "PASS" : "FAIL")
              << '\n';
    return rep.pass ? kExitOk : kExitDiverged;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lp-potential mirror descent for softmax attention: training, "
                 "attention SVMs, and implicit-bias experiment drivers"};
    app.require_subcommand(1);

    CommonOpts gen_o, svm_o, train_o, joint_o, rp_o, fig_o, grad_o, check_o;
    std::string alpha_csv, radii_csv = "2,4,8,16,32", check_what;
    bool svm_head = false, rp_joint = false;
    double r_c0 = 1.0, r_c1 = 0.8;
    std::size_t trials = 20;

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset (JSON)");
    add_common(gen, gen_o);

    CLI::App* svm = app.add_subcommand("svm", "solve the attention (or head) SVM exactly");
    add_common(svm, svm_o);
    svm->add_option("--alpha", alpha_csv, "comma-separated selected token per sample");
    svm->add_flag("--head", svm_head, "solve the head SVM on the selected tokens");

    CLI::App* train = app.add_subcommand("train", "lp mirror-descent training of W");
    add_common(train, train_o);

    CLI::App* joint = app.add_subcommand("joint", "joint lp mirror-descent training of (W, v)");
    add_common(joint, joint_o);

    CLI::App* rp = app.add_subcommand("rp", "regularization-path sweep over radii");
    add_common(rp, rp_o);
    rp->add_option("--radii", radii_csv, "comma-separated increasing radii");
    rp->add_flag("--joint", rp_joint, "joint sweep with coupled head radius r(R)");
    rp->add_option("--r-c0", r_c0, "head radius schedule r = c0 exp(c1 R)");
    rp->add_option("--r-c1", r_c1, "head radius schedule exponent");

    CLI::App* fig = app.add_subcommand("fig-corr", "cross-p divergence matrix experiment");
    add_common(fig, fig_o);
    fig->add_option("--trials", trials, "number of random trials");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "analytic vs finite-difference gradients");
    add_common(gradcheck, grad_o, false);

    CLI::App* check = app.add_subcommand("check", "convergence-law checkers");
    check->add_option("what", check_what, "rates|growth")
        ->required()
        ->check(CLI::IsMember({"rates", "growth"}));
    add_common(check, check_o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (gen->parsed()) {
            apply_env_seed(gen_o);
            return cmd_gen(gen_o);
        }
        if (svm->parsed()) {
            apply_env_seed(svm_o);
            return cmd_svm(svm_o, alpha_csv, svm_head);
        }
        if (train->parsed()) {
            apply_env_seed(train_o);
            return cmd_train(train_o);
        }
        if (joint->parsed()) {
            apply_env_seed(joint_o);
            return cmd_joint(joint_o);
        }
        if (rp->parsed()) {
            apply_env_seed(rp_o);
            return cmd_rp(rp_o, radii_csv, rp_joint, r_c0, r_c1);
        }
        if (fig->parsed()) {
            apply_env_seed(fig_o);
            return cmd_fig_corr(fig_o, trials);
        }
        if (gradcheck->parsed()) {
            apply_env_seed(grad_o);
            return cmd_gradcheck(grad_o);
        }
        if (check->parsed()) {
            apply_env_seed(check_o);
            return cmd_check(check_o, check_what);
        }
    } catch (const DivergedError& e) {
        std::cerr << e.what() << '\n';
        return kExitDiverged;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    return kExitUsage;
}
