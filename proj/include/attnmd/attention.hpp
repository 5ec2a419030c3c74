#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "attnmd/dataset.hpp"
#include "attnmd/linalg.hpp"

namespace attnmd {

/// Chosen token index per sample.
struct TokenSelection {
    std::vector<std::size_t> idx;

    std::size_t size() const { return idx.size(); }
    std::size_t operator[](std::size_t i) const { return idx[i]; }
};

/// Shift-invariant softmax: subtracts the max logit before exponentiating,
/// so logits of magnitude in the hundreds stay in range.
inline Vector softmax(const Vector& logits) {
    require(logits.size() >= 1, "softmax: empty input");
    const double m = *std::max_element(logits.data.begin(), logits.data.end());
    Vector out(logits.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        denom += out[i];
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= denom;
    return out;
}

/// Attention probabilities s = softmax(X W z) for one sample.
inline Vector attn_probs(const Matrix& W, const AttnSample& s) {
    return softmax(matvec(s.X, matvec(W, s.z)));
}

/// Model output f(X, z) = v^T X^T softmax(X W z).
inline double attn_forward(const ModelParams& params, const AttnSample& s) {
    const Vector probs = attn_probs(params.W, s);
    return dot(params.v, matvec_t(s.X, probs));
}

/// Token scores gamma_t = y * v^T X_t for one sample.
inline Vector token_scores(const Vector& v, const AttnSample& s) {
    Vector scores = matvec(s.X, v);
    for (std::size_t t = 0; t < scores.size(); ++t) scores[t] *= s.y;
    return scores;
}

/// Per-sample argmax-score token; ties break to the lowest index.
inline TokenSelection globally_optimal_tokens(const Vector& v, const AttnDataset& ds) {
    TokenSelection sel;
    sel.idx.reserve(ds.n());
    for (const AttnSample& s : ds.samples) {
        const Vector scores = token_scores(v, s);
        std::size_t best = 0;
        for (std::size_t t = 1; t < scores.size(); ++t)
            if (scores[t] > scores[best]) best = t;
        sel.idx.push_back(best);
    }
    return sel;
}

}  // namespace attnmd
