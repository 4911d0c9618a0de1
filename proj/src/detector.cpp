// SPDX-License-Identifier: Apache-2.0
#include "attnguard/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "attnguard/common.hpp"
#include "json.hpp"

namespace attnguard {

using nlohmann::json;

void DetectionConfig::validate(int model_layers) const {
    if (start_layer < 1 || num_layers < 1 || end_layer() > model_layers)
        throw ConfigError("detector: detection layers must be a nonempty consecutive subset of {1..L}");
    if (quantile <= 0.0 || quantile > 1.0)
        throw ConfigError("detector: quantile must lie in (0, 1]");
    if (sigma_floor <= 0.0 || ratio_floor <= 0.0)
        throw ConfigError("detector: floors must be positive");
}

RatioFeature ratio_features(const AttentionTrace& trace, const TokenLayout& layout,
                            const DetectionConfig& cfg) {
    layout.validate();
    if (cfg.end_layer() > static_cast<int>(trace.rows.size()))
        throw TraceError("ratio_features: trace does not cover detection layer " +
                         std::to_string(cfg.end_layer()));
    RatioFeature f;
    f.values.reserve(static_cast<size_t>(cfg.num_layers) * (trace.rows.empty() ? 0 : trace.rows[0].size()));
    for (int l = cfg.start_layer; l <= cfg.end_layer(); ++l) {
        const auto& heads = trace.rows[l - 1];
        for (const std::vector<double>& row : heads) {
            if (static_cast<int>(row.size()) < layout.prm_end())
                throw TraceError("ratio_features: attention row shorter than the prompt region");
            double vis = 0.0, prm = 0.0;
            for (int j = layout.vis_begin(); j < layout.vis_end(); ++j) vis += row[j];
            for (int j = layout.prm_begin(); j < layout.prm_end(); ++j) prm += row[j];
            f.values.push_back(vis / std::max(prm, cfg.ratio_floor));
        }
    }
    return f;
}

double quantile_sorted(std::vector<double> values, double q) {
    if (values.empty()) throw ArgumentError("quantile: empty input");
    if (q <= 0.0 || q > 1.0) throw ArgumentError("quantile: q must lie in (0, 1]");
    std::sort(values.begin(), values.end());
    double pos = q * (values.size() - 1);
    size_t lo = static_cast<size_t>(std::floor(pos));
    size_t hi = static_cast<size_t>(std::ceil(pos));
    if (lo == hi) return values[lo];
    double w = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - w) + values[hi] * w;
}

ReferenceStats calibrate(const std::vector<RatioFeature>& val_features, const DetectionConfig& cfg,
                         int heads) {
    if (val_features.size() < 2)
        throw CalibrationError("calibrate: at least 2 validation features required");
    size_t dim = val_features[0].values.size();
    if (dim != static_cast<size_t>(cfg.num_layers) * heads)
        throw CalibrationError("calibrate: feature dimension does not match layers x heads");
    for (const RatioFeature& f : val_features)
        if (f.values.size() != dim) throw CalibrationError("calibrate: inconsistent feature dimensions");

    ReferenceStats st;
    st.quantile = cfg.quantile;
    st.n_val = static_cast<int>(val_features.size());
    st.start_layer = cfg.start_layer;
    st.num_layers = cfg.num_layers;
    st.heads = heads;
    st.mu.assign(dim, 0.0);
    st.sigma.assign(dim, 0.0);
    for (const RatioFeature& f : val_features)
        for (size_t i = 0; i < dim; ++i) st.mu[i] += f.values[i];
    for (double& m : st.mu) m /= st.n_val;
    for (const RatioFeature& f : val_features)
        for (size_t i = 0; i < dim; ++i) {
            double d = f.values[i] - st.mu[i];
            st.sigma[i] += d * d;
        }
    for (double& s : st.sigma) s = std::max(std::sqrt(s / st.n_val), cfg.sigma_floor);

    std::vector<double> scores;
    scores.reserve(val_features.size());
    for (const RatioFeature& f : val_features) scores.push_back(score(f, st));
    st.gamma = quantile_sorted(std::move(scores), cfg.quantile);
    return st;
}

double score(const RatioFeature& s, const ReferenceStats& stats) {
    if (s.values.size() != stats.mu.size())
        throw DimensionError("score: feature dimension does not match reference statistics");
    double acc = 0.0;
    for (size_t i = 0; i < s.values.size(); ++i) {
        double z = (s.values[i] - stats.mu[i]) / stats.sigma[i];
        acc += z * z;
    }
    return std::sqrt(acc);
}

Detection detect(const AttentionTrace& trace, const TokenLayout& layout, const ReferenceStats& stats,
                 const DetectionConfig& cfg) {
    if (stats.start_layer != cfg.start_layer || stats.num_layers != cfg.num_layers)
        throw ConfigError("detect: reference statistics were calibrated for different detection layers");
    if (!trace.rows.empty() && stats.heads != static_cast<int>(trace.rows[0].size()))
        throw DimensionError("detect: head count mismatch between trace and reference statistics");
    RatioFeature f = ratio_features(trace, layout, cfg);
    double d = score(f, stats);
    return Detection{d > stats.gamma, d};
}

void save_stats(const ReferenceStats& stats, const std::string& path, const std::string& config_hash) {
    json j;
    j["version"] = 1;
    json layers = json::array();
    for (int l = stats.start_layer; l < stats.start_layer + stats.num_layers; ++l) layers.push_back(l);
    j["layers"] = std::move(layers);
    j["heads"] = stats.heads;
    j["mu"] = stats.mu;
    j["sigma"] = stats.sigma;
    j["gamma"] = stats.gamma;
    j["quantile"] = stats.quantile;
    j["n_val"] = stats.n_val;
    j["tool_version"] = std::string(kToolVersion);
    if (!config_hash.empty()) j["config_hash"] = config_hash;
    std::ofstream f(path);
    if (!f) throw IoError("save_stats: cannot open " + path);
    f << j.dump(2) << "\n";
}

ReferenceStats load_stats(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("load_stats: cannot open " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw FormatError(std::string("load_stats: ") + e.what());
    }
    if (j.value("version", -1) != 1) throw FormatError("load_stats: unsupported version");
    ReferenceStats st;
    std::vector<int> layers = j.at("layers").get<std::vector<int>>();
    if (layers.empty()) throw FormatError("load_stats: empty layer list");
    for (size_t i = 1; i < layers.size(); ++i)
        if (layers[i] != layers[i - 1] + 1) throw FormatError("load_stats: layers must be consecutive");
    st.start_layer = layers.front();
    st.num_layers = static_cast<int>(layers.size());
    st.heads = j.at("heads").get<int>();
    st.mu = j.at("mu").get<std::vector<double>>();
    st.sigma = j.at("sigma").get<std::vector<double>>();
    st.gamma = j.at("gamma").get<double>();
    st.quantile = j.at("quantile").get<double>();
    st.n_val = j.at("n_val").get<int>();
    if (st.mu.size() != st.sigma.size() || static_cast<int>(st.mu.size()) != st.dim())
        throw FormatError("load_stats: mu/sigma dimensions inconsistent with layers x heads");
    return st;
}

} // namespace attnguard
