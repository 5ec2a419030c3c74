#include <doctest.h>

#include <cmath>

#include "attnmd/attention.hpp"
#include "attnmd/experiments.hpp"
#include "attnmd/rng.hpp"

using namespace attnmd;

TEST_CASE("softmax basics") {
    SUBCASE("uniform on equal logits") {
        const Vector s = softmax(Vector{0.0, 0.0, 0.0});
        for (std::size_t i = 0; i < 3; ++i)
            CHECK(s[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    }
    SUBCASE("shift invariance and ratio 1:2") {
        for (double c : {-100.0, 0.0, 3.5, 250.0}) {
            const Vector s = softmax(Vector{c, c + std::log(2.0)});
            CHECK(s[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
            CHECK(s[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
        }
    }
    SUBCASE("no overflow on huge logits") {
        const Vector s = softmax(Vector{1000.0, 0.0});
        CHECK(std::isfinite(s[0]));
        CHECK(s[0] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(s[0] + s[1] == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("empty input rejected") { CHECK_THROWS_AS(softmax(Vector{}), std::invalid_argument); }
    SUBCASE("simplex and strict positivity on random logits") {
        Rng rng(RngSeed{3});
        for (int rep = 0; rep < 30; ++rep) {
            Vector logits(5);
            for (double& x : logits.data) x = rng.next_uniform(-50.0, 50.0);
            const Vector s = softmax(logits);
            double sum = 0.0;
            for (double x : s.data) {
                CHECK(x > 0.0);
                sum += x;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("attn_probs") {
    AttnDataset ds = example2_dataset();
    SUBCASE("zero W gives uniform attention") {
        const Vector s = attn_probs(Matrix(2, 2), ds.samples[0]);
        for (std::size_t t = 0; t < 3; ++t)
            CHECK(s[t] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
    }
    SUBCASE("identical rows get identical probabilities") {
        AttnSample s;
        s.X = Matrix(3, 2, {1.0, 2.0, 1.0, 2.0, 0.5, -1.0});
        s.y = 1;
        s.z = Vector{0.3, -0.7};
        Matrix w(2, 2, {0.2, -0.1, 0.4, 0.9});
        const Vector probs = attn_probs(w, s);
        CHECK(probs[0] == doctest::Approx(probs[1]).epsilon(1e-14));
    }
    SUBCASE("shape mismatch rejected") {
        CHECK_THROWS_AS(attn_probs(Matrix(3, 3), ds.samples[0]), std::invalid_argument);
    }
}

TEST_CASE("attn_forward") {
    AttnDataset ds = example2_dataset();
    SUBCASE("zero head gives zero output") {
        ModelParams params{Matrix(2, 2, {0.5, -0.2, 0.1, 0.3}), Vector(2)};
        CHECK(attn_forward(params, ds.samples[0]) == 0.0);
    }
    SUBCASE("zero W averages token values") {
        ModelParams params{Matrix(2, 2), Vector{1.0, -2.0}};
        double mean = 0.0;
        for (std::size_t t = 0; t < 3; ++t)
            mean += ds.samples[0].X(t, 0) * 1.0 + ds.samples[0].X(t, 1) * -2.0;
        mean /= 3.0;
        CHECK(attn_forward(params, ds.samples[0]) == doctest::Approx(mean).epsilon(1e-14));
    }
    SUBCASE("linear in v") {
        Rng rng(RngSeed{17});
        Matrix w(2, 2);
        for (double& x : w.data) x = rng.next_gaussian();
        Vector v1{0.3, -1.1}, v2{2.0, 0.7};
        const double a = 1.7, b = -0.4;
        Vector vc{a * v1[0] + b * v2[0], a * v1[1] + b * v2[1]};
        const double lhs = attn_forward({w, vc}, ds.samples[1]);
        const double rhs = a * attn_forward({w, v1}, ds.samples[1]) +
                           b * attn_forward({w, v2}, ds.samples[1]);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }
}

TEST_CASE("token scores") {
    AttnDataset ds = example2_dataset();
    SUBCASE("zero head, zero scores") {
        const Vector scores = token_scores(Vector(2), ds.samples[0]);
        for (double g : scores.data) CHECK(g == 0.0);
    }
    SUBCASE("published first-column scores for sample 1") {
        const Vector scores = token_scores(Vector{1.0, 0.0}, ds.samples[0]);
        CHECK(scores[0] == doctest::Approx(-5.4).epsilon(1e-14));
        CHECK(scores[1] == doctest::Approx(2.8).epsilon(1e-14));
        CHECK(scores[2] == doctest::Approx(2.6).epsilon(1e-14));
    }
    SUBCASE("label flips sign") {
        AttnSample flipped = ds.samples[0];
        flipped.y = -1;
        const Vector pos = token_scores(Vector{0.4, -0.9}, ds.samples[0]);
        const Vector neg = token_scores(Vector{0.4, -0.9}, flipped);
        for (std::size_t t = 0; t < 3; ++t) CHECK(pos[t] == doctest::Approx(-neg[t]));
    }
}

TEST_CASE("globally optimal tokens") {
    AttnDataset ds = example2_dataset();
    SUBCASE("zero head ties break to index zero") {
        const TokenSelection sel = globally_optimal_tokens(Vector(2), ds);
        CHECK(sel[0] == 0);
        CHECK(sel[1] == 0);
    }
    SUBCASE("sample 1 picks the 2.8 score under v=(1,0)") {
        const TokenSelection sel = globally_optimal_tokens(Vector{1.0, 0.0}, ds);
        CHECK(sel[0] == 1);
    }
    SUBCASE("invariant under positive rescaling") {
        Rng rng(RngSeed{23});
        for (int rep = 0; rep < 20; ++rep) {
            Vector v(2);
            v[0] = rng.next_gaussian();
            v[1] = rng.next_gaussian();
            const TokenSelection a = globally_optimal_tokens(v, ds);
            const TokenSelection b = globally_optimal_tokens(2.0 * v, ds);
            CHECK(a.idx == b.idx);
        }
    }
}
