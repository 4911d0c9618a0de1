// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <set>
#include <vector>

#include "attnguard/detector.hpp"
#include "attnguard/model.hpp"
#include "attnguard/rng.hpp"
#include "attnguard/task.hpp"

namespace attnguard {

struct PruneMask {
    std::set<int> omega;      // visual token positions to suppress
    double bias = -1e9;       // b << 0; exact softmax underflow in 64-bit
    int active_from_layer = 0; // ℓ_e + 1, 1-based
};

// Ω = { j in I_vis : max over heads of attention at layer `layer` on key j > tau }.
PruneMask build_prune_mask(const AttentionTrace& trace, const TokenLayout& layout, int layer,
                           double tau, double bias = -1e9);

AttentionBias to_attention_bias(const PruneMask& mask);

struct PurifiedDecode {
    std::vector<int> output;  // generated answer tokens
    bool flagged = false;
    double score = 0.0;
    PruneMask mask;           // empty when not flagged
    std::vector<AttentionTrace> step_traces;
};

// Full detect-then-prune pipeline for one sample: score the first-step trace;
// when flagged, rebuild Ω at ℓ_e = max(L_det) and decode with the bias mask
// installed for every later layer and every step.
PurifiedDecode purified_decode(const ModelParameters& params, const std::vector<int>& input_tokens,
                               const TokenLayout& layout, const ReferenceStats& stats,
                               const DetectionConfig& cfg, double tau, double bias = -1e9);

// Post-softmax hook blending each row's visual sub-distribution with uniform
// (over the row's visible visual keys); total visual mass is preserved.
AttnHook attention_interpolate(double lambda);

PruneMask random_prune_mask(const TokenLayout& layout, double fraction, Pcg32& rng,
                            double bias = -1e9, int active_from_layer = 1);

// Each visual token independently resampled from the visual vocabulary with
// probability `intensity`.
Sample token_noise(const Sample& sample, double intensity, int visual_vocab, Pcg32& rng);

} // namespace attnguard
