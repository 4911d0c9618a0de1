// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "attnguard/model.hpp"

namespace attnguard {

struct DetectionConfig {
    int start_layer = 2;    // 1-based; L_det = {start_layer, ..., start_layer + num_layers - 1}
    int num_layers = 3;
    double quantile = 0.99;
    double sigma_floor = 1e-8;
    double ratio_floor = 1e-12;

    int end_layer() const { return start_layer + num_layers - 1; } // ℓ_e
    void validate(int model_layers) const;
};

// Per-head visual/prompt attention-mass ratios over the detection layers,
// concatenated layer-major.
struct RatioFeature {
    std::vector<double> values;
};

struct ReferenceStats {
    std::vector<double> mu;
    std::vector<double> sigma; // floored at sigma_floor
    double gamma = 0.0;
    double quantile = 0.99;
    int n_val = 0;
    int start_layer = 0;
    int num_layers = 0;
    int heads = 0;

    int dim() const { return num_layers * heads; }
};

RatioFeature ratio_features(const AttentionTrace& trace, const TokenLayout& layout,
                            const DetectionConfig& cfg);

// Quantile by sorted linear interpolation between order statistics; q in (0, 1].
double quantile_sorted(std::vector<double> values, double q);

ReferenceStats calibrate(const std::vector<RatioFeature>& val_features, const DetectionConfig& cfg,
                         int heads);

// Whitened l2 deviation from the clean reference.
double score(const RatioFeature& s, const ReferenceStats& stats);

struct Detection {
    bool is_poisoned = false;
    double score = 0.0;
};

Detection detect(const AttentionTrace& trace, const TokenLayout& layout, const ReferenceStats& stats,
                 const DetectionConfig& cfg);

void save_stats(const ReferenceStats& stats, const std::string& path,
                const std::string& config_hash = "");
ReferenceStats load_stats(const std::string& path);

} // namespace attnguard
