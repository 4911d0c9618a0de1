// SPDX-License-Identifier: Apache-2.0
#include "attnguard/purifier.hpp"

#include <algorithm>
#include <cmath>

#include "attnguard/common.hpp"

namespace attnguard {

PruneMask build_prune_mask(const AttentionTrace& trace, const TokenLayout& layout, int layer,
                           double tau, double bias) {
    if (layer < 1 || layer > static_cast<int>(trace.rows.size()))
        throw TraceError("build_prune_mask: layer " + std::to_string(layer) + " missing from trace");
    PruneMask mask;
    mask.bias = bias;
    mask.active_from_layer = layer + 1;
    const auto& heads = trace.rows[layer - 1];
    for (int j = layout.vis_begin(); j < layout.vis_end(); ++j) {
        double mx = 0.0;
        for (const std::vector<double>& row : heads) {
            if (j < static_cast<int>(row.size())) mx = std::max(mx, row[j]);
        }
        if (mx > tau) mask.omega.insert(j);
    }
    return mask;
}

AttentionBias to_attention_bias(const PruneMask& mask) {
    AttentionBias b;
    b.active_from_layer = mask.active_from_layer;
    for (int j : mask.omega) b.key_bias[j] = mask.bias;
    return b;
}

PurifiedDecode purified_decode(const ModelParameters& params, const std::vector<int>& input_tokens,
                               const TokenLayout& layout, const ReferenceStats& stats,
                               const DetectionConfig& cfg, double tau, double bias) {
    PurifiedDecode result;
    ForwardOutput probe = forward(params, input_tokens, layout);
    Detection det = detect(probe.trace, layout, stats, cfg);
    result.flagged = det.is_poisoned;
    result.score = det.score;

    ForwardOptions opts;
    AttentionBias attn_bias;
    if (det.is_poisoned) {
        result.mask = build_prune_mask(probe.trace, layout, cfg.end_layer(), tau, bias);
        attn_bias = to_attention_bias(result.mask);
        if (!result.mask.omega.empty()) opts.bias = &attn_bias;
    }
    std::vector<int> seq = decode_greedy(params, input_tokens, layout, params.config.answer_len, opts,
                                         &result.step_traces);
    result.output.assign(seq.begin() + static_cast<long>(input_tokens.size()), seq.end());
    return result;
}

AttnHook attention_interpolate(double lambda) {
    if (lambda < 0.0 || lambda > 1.0)
        throw ArgumentError("attention_interpolate: lambda must lie in [0, 1]");
    return [lambda](int /*layer*/, int /*head*/, int /*query*/, std::span<double> row,
                    const TokenLayout& layout) {
        int lo = layout.vis_begin();
        int hi = std::min<int>(layout.vis_end(), static_cast<int>(row.size()));
        if (hi <= lo) return;
        int n = hi - lo;
        double mass = 0.0;
        for (int j = lo; j < hi; ++j) mass += row[j];
        double uniform = mass / n;
        for (int j = lo; j < hi; ++j) row[j] = (1.0 - lambda) * row[j] + lambda * uniform;
    };
}

PruneMask random_prune_mask(const TokenLayout& layout, double fraction, Pcg32& rng, double bias,
                            int active_from_layer) {
    if (fraction < 0.0 || fraction > 1.0)
        throw ArgumentError("random_prune_mask: fraction must lie in [0, 1]");
    int n = static_cast<int>(std::floor(fraction * layout.vis_len));
    std::vector<int> positions;
    positions.reserve(layout.vis_len);
    for (int j = layout.vis_begin(); j < layout.vis_end(); ++j) positions.push_back(j);
    rng.shuffle(positions);
    PruneMask mask;
    mask.bias = bias;
    mask.active_from_layer = active_from_layer;
    mask.omega.insert(positions.begin(), positions.begin() + n);
    return mask;
}

Sample token_noise(const Sample& sample, double intensity, int visual_vocab, Pcg32& rng) {
    if (intensity < 0.0 || intensity > 1.0)
        throw ArgumentError("token_noise: intensity must lie in [0, 1]");
    Sample out = sample;
    for (int& g : out.grid)
        if (rng.next_double() < intensity)
            g = static_cast<int>(rng.next_below(static_cast<uint32_t>(visual_vocab)));
    return out;
}

} // namespace attnguard
