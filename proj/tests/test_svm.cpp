#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include "attnmd/experiments.hpp"
#include "attnmd/rng.hpp"
#include "attnmd/svm.hpp"

using namespace attnmd;

namespace {

// ---- test-only oracles ----------------------------------------------------

struct GridProblem {
    std::vector<std::array<double, 4>> rows;  // constraint coefficients on vec(W)

    bool feasible(const std::array<double, 4>& w) const {
        for (const auto& a : rows) {
            double m = 0.0;
            for (int i = 0; i < 4; ++i) m += a[i] * w[i];
            if (m < 1.0) return false;
        }
        return true;
    }
    double norm_p(const std::array<double, 4>& w, double p) const {
        double s = 0.0;
        for (double x : w) s += std::pow(std::fabs(x), p);
        return std::pow(s, 1.0 / p);
    }
};

/// Dense coarse grid over the 2x2 matrix followed by shrinking local
/// refinement. Every candidate is rescaled onto the feasibility boundary
/// through the constraints' positive homogeneity (w and w / min-margin share
/// a ray), so the stencil explores boundary directions unconstrained.
/// Independent of the production solver: only margin evaluations and norm
/// comparisons.
std::array<double, 4> grid_refine_oracle(const GridProblem& prob, double p, double range) {
    const auto boundary_norm = [&](std::array<double, 4> w,
                                   std::array<double, 4>& out) -> double {
        double min_margin = 1e300;
        for (const auto& a : prob.rows) {
            double m = 0.0;
            for (int i = 0; i < 4; ++i) m += a[i] * w[i];
            min_margin = std::min(min_margin, m);
        }
        if (min_margin <= 1e-12) return 1e300;
        for (double& x : w) x /= min_margin;
        out = w;
        return prob.norm_p(w, p);
    };

    std::array<double, 4> best{};
    double best_norm = 1e300;
    const int steps = 10;
    for (int i0 = -steps; i0 <= steps; ++i0)
        for (int i1 = -steps; i1 <= steps; ++i1)
            for (int i2 = -steps; i2 <= steps; ++i2)
                for (int i3 = -steps; i3 <= steps; ++i3) {
                    std::array<double, 4> scaled;
                    const double norm = boundary_norm({range * i0 / steps, range * i1 / steps,
                                                       range * i2 / steps, range * i3 / steps},
                                                      scaled);
                    if (norm < best_norm) {
                        best_norm = norm;
                        best = scaled;
                    }
                }
    REQUIRE(best_norm < 1e300);  // the coarse stage must find a feasible direction

    double radius = range / steps;
    while (radius > 1e-9) {
        bool improved = false;
        const int local = 3;
        const std::array<double, 4> center = best;
        for (int i0 = -local; i0 <= local; ++i0)
            for (int i1 = -local; i1 <= local; ++i1)
                for (int i2 = -local; i2 <= local; ++i2)
                    for (int i3 = -local; i3 <= local; ++i3) {
                        std::array<double, 4> scaled;
                        const double norm =
                            boundary_norm({center[0] + radius * i0 / local,
                                           center[1] + radius * i1 / local,
                                           center[2] + radius * i2 / local,
                                           center[3] + radius * i3 / local},
                                          scaled);
                        if (norm < best_norm - 1e-16) {
                            best_norm = norm;
                            best = scaled;
                            improved = true;
                        }
                    }
        if (!improved) radius *= 0.5;
    }
    return best;
}

GridProblem example1_problem() {
    auto [ds, alpha] = example1_dataset();
    GridProblem prob;
    for (std::size_t i = 0; i < ds.n(); ++i) {
        const AttnSample& s = ds.samples[i];
        std::array<double, 4> row{};
        for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b)
                row[a * 2 + b] = (s.X(alpha[i], a) - s.X(1 - alpha[i], a)) * s.z[b];
        prob.rows.push_back(row);
    }
    return prob;
}

/// Closed-form two-constraint projection for the p=2 head SVM: try the corner
/// (both constraints active, duals nonnegative) and the two single-constraint
/// projections; return the feasible candidate of least norm.
Vector two_constraint_projection(const Vector& a1, const Vector& a2) {
    std::vector<Vector> candidates;
    const double g11 = dot(a1, a1), g12 = dot(a1, a2), g22 = dot(a2, a2);
    const double det = g11 * g22 - g12 * g12;
    if (std::fabs(det) > 1e-12) {
        const double l1 = (g22 - g12) / det;
        const double l2 = (g11 - g12) / det;
        if (l1 >= 0.0 && l2 >= 0.0) candidates.push_back(l1 * a1 + l2 * a2);
    }
    candidates.push_back((1.0 / g11) * a1);
    candidates.push_back((1.0 / g22) * a2);

    Vector best;
    double best_norm = 1e300;
    for (const Vector& v : candidates) {
        if (dot(a1, v) < 1.0 - 1e-10 || dot(a2, v) < 1.0 - 1e-10) continue;
        const double norm = euclidean_norm(v);
        if (norm < best_norm) {
            best_norm = norm;
            best = v;
        }
    }
    REQUIRE(best_norm < 1e300);
    return best;
}

}  // namespace

TEST_CASE("example 1 attention SVM matches the grid-refinement oracle") {
    auto [ds, alpha] = example1_dataset();
    const GridProblem prob = example1_problem();

    for (double p : {2.0, 3.0}) {
        CAPTURE(p);
        const SvmSolution sol = solve_att_svm(ds, alpha, p);
        REQUIRE(sol.status == SvmStatus::Optimal);
        const std::array<double, 4> oracle = grid_refine_oracle(prob, p, 0.12);
        for (std::size_t i = 0; i < 4; ++i)
            CHECK(std::fabs(sol.W.data[i] - oracle[i]) < 1e-4);
        CHECK(sol.objective <= prob.norm_p(oracle, p) + 1e-8);
        // solver contract: feasible margins, something active
        for (double m : sol.margins.data) CHECK(m >= 1.0 - 1e-8);
        double min_m = 1e300;
        for (double m : sol.margins.data) min_m = std::min(min_m, m);
        CHECK(min_m <= 1.0 + 1e-6);
        CHECK(sol.kkt_residual < 1e-6);
    }
}

TEST_CASE("example 1 p=3 solution from the Hoelder dual map") {
    // single effective constraint a^T w = 1 with a = (25, 0, -5, 0):
    // w_i = sign(a_i)|a_i|^(q-1) / ||a||_q^q, q = p/(p-1)
    auto [ds, alpha] = example1_dataset();
    const SvmSolution sol = solve_att_svm(ds, alpha, 3.0);
    REQUIRE(sol.status == SvmStatus::Optimal);
    const double q = 1.5;
    const double denom = std::pow(25.0, q) + std::pow(5.0, q);
    CHECK(sol.W(0, 0) == doctest::Approx(std::pow(25.0, q - 1.0) / denom).epsilon(1e-6));
    CHECK(std::fabs(sol.W(0, 1)) < 1e-8);
    CHECK(sol.W(1, 0) == doctest::Approx(-std::pow(5.0, q - 1.0) / denom).epsilon(1e-6));
    CHECK(std::fabs(sol.W(1, 1)) < 1e-8);
}

TEST_CASE("single-constraint p=2 gives the rank-one least-norm solution") {
    AttnDataset ds;
    AttnSample s;
    s.X = Matrix(2, 3, {1.0, -2.0, 0.5, 0.2, 0.3, -1.0});
    s.y = 1;
    s.z = Vector{0.4, 1.1, -0.6};
    ds.samples.push_back(s);
    TokenSelection alpha;
    alpha.idx = {0};

    const SvmSolution sol = solve_att_svm(ds, alpha, 2.0);
    REQUIRE(sol.status == SvmStatus::Optimal);
    Vector a(3);
    for (std::size_t i = 0; i < 3; ++i) a[i] = s.X(0, i) - s.X(1, i);
    const Matrix expect = (1.0 / (dot(a, a) * dot(s.z, s.z))) * outer(a, s.z);
    for (std::size_t i = 0; i < 9; ++i)
        CHECK(std::fabs(sol.W.data[i] - expect.data[i]) < 1e-8);
}

TEST_CASE("head SVM") {
    SUBCASE("axis-aligned symmetric pair: all p agree") {
        std::vector<std::pair<Vector, int>> pts;
        pts.emplace_back(Vector{1.0, 0.0}, 1);
        pts.emplace_back(Vector{-1.0, 0.0}, -1);
        for (double p : {2.0, 3.0}) {
            const SvmSolution sol = solve_v_svm(pts, p);
            REQUIRE(sol.status == SvmStatus::Optimal);
            CHECK(sol.v[0] == doctest::Approx(1.0).epsilon(1e-7));
            CHECK(std::fabs(sol.v[1]) < 1e-7);
            CHECK(sol.label_margin == doctest::Approx(1.0).epsilon(1e-7));
        }
    }
    SUBCASE("example 2 optimal tokens match the projection oracle at p=2") {
        AttnDataset ds = example2_dataset();
        TokenSelection alpha;
        alpha.idx = {0, 0};
        const SvmSolution sol = solve_v_svm(ds, alpha, 2.0);
        REQUIRE(sol.status == SvmStatus::Optimal);
        for (double m : sol.margins.data) CHECK(m >= 1.0 - 1e-8);

        Vector a1(2), a2(2);
        for (std::size_t k = 0; k < 2; ++k) {
            a1[k] = ds.samples[0].y * ds.samples[0].X(0, k);
            a2[k] = ds.samples[1].y * ds.samples[1].X(0, k);
        }
        const Vector oracle = two_constraint_projection(a1, a2);
        CHECK(sol.objective == doctest::Approx(euclidean_norm(oracle)).epsilon(1e-6));
        for (std::size_t k = 0; k < 2; ++k)
            CHECK(std::fabs(sol.v[k] - oracle[k]) < 1e-6);
    }
    SUBCASE("non-separable points are infeasible") {
        std::vector<std::pair<Vector, int>> pts;
        pts.emplace_back(Vector{1.0, 0.0}, 1);
        pts.emplace_back(Vector{1.0, 0.0}, -1);
        const SvmSolution sol = solve_v_svm(pts, 2.0);
        CHECK(sol.status == SvmStatus::Infeasible);
    }
}

TEST_CASE("degenerate duplicate tokens are reported infeasible with the pair") {
    AttnDataset ds;
    AttnSample s;
    s.X = Matrix(3, 2, {1.0, 0.0, 1.0, 0.0, 0.0, 1.0});  // tokens 0 and 1 identical
    s.y = 1;
    s.z = Vector{1.0, 1.0};
    ds.samples.push_back(s);
    TokenSelection alpha;
    alpha.idx = {0};
    const SvmSolution sol = solve_att_svm(ds, alpha, 2.0);
    CHECK(sol.status == SvmStatus::Infeasible);
    CHECK(sol.note.find("sample 0") != std::string::npos);
}

TEST_CASE("objective optimality via random feasible perturbations") {
    auto [ds, v] = gen_synthetic(3, 3, 4, RngSeed{15});
    const TokenSelection alpha = globally_optimal_tokens(v, ds);
    for (double p : {1.75, 2.0, 3.0}) {
        CAPTURE(p);
        const SvmSolution sol = solve_att_svm(ds, alpha, p);
        REQUIRE(sol.status == SvmStatus::Optimal);
        Rng rng(RngSeed{99});
        for (int rep = 0; rep < 50; ++rep) {
            Matrix dir(4, 4);
            for (double& x : dir.data) x = rng.next_gaussian();
            Matrix trial = sol.W + (0.02 * pq_norm(sol.W, p) / frobenius_norm(dir)) * dir;
            // project back to feasibility by scaling out the worst margin
            double min_margin = 1e300;
            for (std::size_t c = 0; c < sol.constraint_ids.size(); ++c) {
                const auto [i, t] = sol.constraint_ids[c];
                Vector a(4);
                for (std::size_t k = 0; k < 4; ++k)
                    a[k] = ds.samples[i].X(alpha[i], k) - ds.samples[i].X(t, k);
                min_margin = std::min(min_margin, dot(a, matvec(trial, ds.samples[i].z)));
            }
            if (min_margin <= 0.0) continue;
            trial = (1.0 / min_margin) * trial;
            CHECK(pq_norm(trial, p) >= sol.objective - 1e-6 * (1.0 + sol.objective));
        }
    }
}

TEST_CASE("scaling covariance: z -> c z scales W by 1/c") {
    auto [ds, v] = gen_synthetic(3, 3, 4, RngSeed{31});
    const TokenSelection alpha = globally_optimal_tokens(v, ds);
    const double c = 2.5;
    AttnDataset scaled = ds;
    for (AttnSample& s : scaled.samples)
        for (double& x : s.z.data) x *= c;

    for (double p : {1.75, 3.0}) {
        CAPTURE(p);
        const SvmSolution base = solve_att_svm(ds, alpha, p);
        const SvmSolution scal = solve_att_svm(scaled, alpha, p);
        REQUIRE(base.status == SvmStatus::Optimal);
        REQUIRE(scal.status == SvmStatus::Optimal);
        for (std::size_t i = 0; i < base.W.data.size(); ++i)
            CHECK(scal.W.data[i] ==
                  doctest::Approx(base.W.data[i] / c).epsilon(1e-6));
    }
}

TEST_CASE("Hoelder inequality between pq_norm and its dual") {
    Rng rng(RngSeed{61});
    for (double p : {1.5, 2.0, 3.0}) {
        const double q = p / (p - 1.0);
        for (int rep = 0; rep < 30; ++rep) {
            Matrix m(3, 3), n(3, 3);
            for (double& x : m.data) x = rng.next_gaussian();
            for (double& x : n.data) x = rng.next_gaussian();
            CHECK(inner(m, n) <= pq_norm(m, p) * pq_norm(n, q) + 1e-12);
        }
    }
}

TEST_CASE("support tokens") {
    SUBCASE("example 1: every sample has a support token, partition holds") {
        auto [ds, alpha] = example1_dataset();
        const SvmSolution sol = solve_att_svm(ds, alpha, 3.0);
        REQUIRE(sol.status == SvmStatus::Optimal);
        const SupportSets sets = support_tokens(ds, alpha, sol);
        for (std::size_t i = 0; i < ds.n(); ++i) {
            CHECK(!sets.support[i].empty());
            CHECK(sets.support[i].size() + sets.non_support[i].size() + 1 == ds.T());
        }
    }
    SUBCASE("partition on a synthetic instance") {
        auto [ds, v] = gen_synthetic(3, 4, 5, RngSeed{44});
        const TokenSelection alpha = globally_optimal_tokens(v, ds);
        const SvmSolution sol = solve_att_svm(ds, alpha, 2.0);
        REQUIRE(sol.status == SvmStatus::Optimal);
        const SupportSets sets = support_tokens(ds, alpha, sol);
        for (std::size_t i = 0; i < ds.n(); ++i) {
            std::vector<bool> seen(ds.T(), false);
            seen[alpha[i]] = true;
            for (std::size_t t : sets.support[i]) {
                CHECK(!seen[t]);
                seen[t] = true;
            }
            for (std::size_t t : sets.non_support[i]) {
                CHECK(!seen[t]);
                seen[t] = true;
            }
            for (bool b : seen) CHECK(b);
        }
    }
    SUBCASE("singleton supports when all other margins are strictly larger") {
        // token 2 sits far from the selected token, so its margin lands well
        // above 1 and only the token-1 constraint stays active
        AttnDataset ds;
        AttnSample s;
        s.X = Matrix(3, 2, {2.0, 1.0, 1.0, 0.0, -20.0, -20.0});
        s.y = 1;
        s.z = Vector{1.0, 0.5};
        ds.samples.push_back(s);
        TokenSelection alpha;
        alpha.idx = {0};
        const SvmSolution sol = solve_att_svm(ds, alpha, 2.0);
        REQUIRE(sol.status == SvmStatus::Optimal);
        const SupportSets sets = support_tokens(ds, alpha, sol);
        CHECK(sets.support[0].size() == 1);
    }
    SUBCASE("tol=0 on perturbed margins flags empty supports") {
        auto [ds, alpha] = example1_dataset();
        SvmSolution sol = solve_att_svm(ds, alpha, 2.0);
        REQUIRE(sol.status == SvmStatus::Optimal);
        for (double& m : sol.margins.data) m += 1e-12;  // off the exact boundary
        const SupportSets sets = support_tokens(ds, alpha, sol, 0.0);
        CHECK(sets.empty_support_warning);
    }
}

TEST_CASE("local optimality verification") {
    SUBCASE("globally optimal tokens with unique maxima pass") {
        auto [ds, v] = gen_synthetic(3, 3, 4, RngSeed{51});
        const TokenSelection alpha = globally_optimal_tokens(v, ds);
        const LocalOptReport report = verify_local_optimality(ds, v, alpha, 2.0);
        REQUIRE(report.solver_status == SvmStatus::Optimal);
        CHECK(report.verdict);
    }
    SUBCASE("adversarial head flips the verdict on example 1") {
        auto [ds, alpha] = example1_dataset();
        // v = (0,1): sample-0 scores are (0, 1), support token outscores alpha
        const LocalOptReport report = verify_local_optimality(ds, Vector{0.0, 1.0}, alpha, 3.0);
        REQUIRE(report.solver_status == SvmStatus::Optimal);
        CHECK(!report.verdict);
    }
}

TEST_CASE("diagnostic constants") {
    auto [ds, alpha] = example1_dataset();
    const double p = 3.0;
    const SvmSolution sol = solve_att_svm(ds, alpha, p);
    REQUIRE(sol.status == SvmStatus::Optimal);
    const Vector v{1.0, 0.0};
    const Diagnostics diag = compute_constants(ds, v, alpha, sol, p);

    SUBCASE("all non-selected tokens are support: delta' infinite, delta 0.25") {
        CHECK(std::isinf(diag.delta_prime));
        CHECK(diag.delta == 0.25);
    }
    SUBCASE("fields are finite and positive") {
        CHECK(diag.A >= 1.0);
        CHECK(std::isfinite(diag.A));
        CHECK(diag.mu0 > 0.0);
        CHECK(diag.Gamma >= 0.0);
        for (double s : diag.S) CHECK(std::isfinite(s));
        for (double q : diag.Q) CHECK(std::isfinite(q));
    }
    SUBCASE("p=2 closed form for mu0") {
        const SvmSolution sol2 = solve_att_svm(ds, alpha, 2.0);
        const Diagnostics d2 = compute_constants(ds, v, alpha, sol2, 2.0);
        const double expect = 0.5 * std::pow(d2.delta / (8.0 * d2.A), 2.0);
        CHECK(d2.mu0 == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("cone membership") {
    Matrix ref(2, 2, {1.0, 0.0, -2.0, 0.5});
    const double p = 2.0;
    ConeSpec spec{p, 0.1, 4.0, ref};
    SUBCASE("scaled reference is inside with zero divergence") {
        const ConeMembership m = cone_membership(spec, 2.0 * ref);
        CHECK(m.in_S);
        CHECK(m.divergence <= 1e-14);
        CHECK(m.in_C == (pq_norm(2.0 * ref, p) >= 4.0));
    }
    SUBCASE("right direction but small norm is in S, not C") {
        const Matrix small = (0.5 * spec.R / pq_norm(ref, p)) * ref;
        const ConeMembership m = cone_membership(spec, small);
        CHECK(m.in_S);
        CHECK(!m.in_C);
    }
    SUBCASE("zero matrix rejected") {
        CHECK_THROWS_AS(cone_membership(spec, Matrix(2, 2)), std::domain_error);
    }
}

TEST_CASE("solution JSON carries the full certificate") {
    auto [ds, alpha] = example1_dataset();
    const SvmSolution sol = solve_att_svm(ds, alpha, 3.0);
    const nlohmann::json j = to_json(sol);
    CHECK(j.at("status") == "optimal");
    CHECK(j.at("weights").size() == 2);
    CHECK(j.at("margins").size() == 2);
    CHECK(!j.at("active_set").empty());
    CHECK(j.at("objective").get<double>() == doctest::Approx(sol.objective));
}
