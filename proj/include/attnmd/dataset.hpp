#pragma once

#include <cstddef>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "attnmd/linalg.hpp"

namespace attnmd {

/// One classification sample: T token embeddings (rows of X), a +-1 label,
/// and the comparison token z used to form the attention logits X W z.
struct AttnSample {
    Matrix X;  // T x d
    int y = 1;
    Vector z;  // length d
};

struct AttnDataset {
    std::vector<AttnSample> samples;

    std::size_t n() const { return samples.size(); }
    std::size_t T() const { return samples.empty() ? 0 : samples.front().X.rows; }
    std::size_t d() const { return samples.empty() ? 0 : samples.front().X.cols; }
};

/// Trainable parameters: key-query product W (d x d) and prediction head v.
struct ModelParams {
    Matrix W;
    Vector v;
};

inline void validate(const AttnDataset& ds) {
    require(ds.n() >= 1, "dataset: needs at least one sample");
    const std::size_t T = ds.T();
    const std::size_t d = ds.d();
    require(T >= 2, "dataset: each sample needs T >= 2 tokens");
    for (std::size_t i = 0; i < ds.n(); ++i) {
        const AttnSample& s = ds.samples[i];
        require(s.X.rows == T && s.X.cols == d, "dataset: inconsistent sample shapes");
        require(s.z.size() == d, "dataset: z length must equal token dimension");
        require(s.y == 1 || s.y == -1, "dataset: labels must be exactly +1 or -1");
        require(s.X.all_finite() && s.z.all_finite(), "dataset: non-finite entries");
    }
}

inline void validate(const ModelParams& params) {
    require(params.W.rows == params.W.cols, "params: W must be square");
    require(params.v.size() == params.W.rows, "params: v length must equal W side");
    require(params.W.all_finite() && params.v.all_finite(), "params: non-finite entries");
}

// --- JSON schema ---------------------------------------------------------
// {"T":int,"d":int,"samples":[{"X":[[...]],"y":1|-1,"z":[...]}]}

inline nlohmann::json to_json(const AttnDataset& ds) {
    nlohmann::json j;
    j["T"] = ds.T();
    j["d"] = ds.d();
    j["samples"] = nlohmann::json::array();
    for (const AttnSample& s : ds.samples) {
        nlohmann::json js;
        auto rows = nlohmann::json::array();
        for (std::size_t t = 0; t < s.X.rows; ++t) {
            auto row = nlohmann::json::array();
            for (std::size_t k = 0; k < s.X.cols; ++k) row.push_back(s.X(t, k));
            rows.push_back(std::move(row));
        }
        js["X"] = std::move(rows);
        js["y"] = s.y;
        js["z"] = s.z.data;
        j["samples"].push_back(std::move(js));
    }
    return j;
}

inline AttnDataset dataset_from_json(const nlohmann::json& j) {
    AttnDataset ds;
    const std::size_t T = j.at("T").get<std::size_t>();
    const std::size_t d = j.at("d").get<std::size_t>();
    for (const auto& js : j.at("samples")) {
        AttnSample s;
        const auto& rows = js.at("X");
        require(rows.size() == T, "dataset json: X row count != T");
        s.X = Matrix(T, d);
        for (std::size_t t = 0; t < T; ++t) {
            const auto& row = rows.at(t);
            require(row.size() == d, "dataset json: X col count != d");
            for (std::size_t k = 0; k < d; ++k) s.X(t, k) = row.at(k).get<double>();
        }
        s.y = js.at("y").get<int>();
        s.z.data = js.at("z").get<std::vector<double>>();
        ds.samples.push_back(std::move(s));
    }
    validate(ds);
    return ds;
}

inline void save_dataset(const AttnDataset& ds, const std::string& path) {
    std::ofstream out(path);
    require(out.good(), "save_dataset: cannot open " + path);
    out << to_json(ds).dump(2) << '\n';
}

inline AttnDataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "load_dataset: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return dataset_from_json(j);
}

}  // namespace attnmd
