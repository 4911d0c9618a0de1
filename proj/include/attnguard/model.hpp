// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attnguard/rng.hpp"
#include "attnguard/tensor.hpp"

namespace attnguard {

struct ModelConfig {
    int num_layers = 6;
    int num_heads = 4;
    int model_dim = 64;
    int visual_vocab = 10;
    // leading rows of the visual embedding covered by the frozen encoder's
    // training distribution; they share a common feature component at init
    int content_vocab = 4;
    int text_vocab = 16;
    int max_seq = 24;
    int answer_len = 1;

    int head_dim() const { return model_dim / num_heads; }
    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Contiguous token regions in the fixed order sys < vis < prm < answer.
struct TokenLayout {
    int sys_len = 2;
    int vis_len = 16;
    int prm_len = 4;

    int vis_begin() const { return sys_len; }
    int vis_end() const { return sys_len + vis_len; }
    int prm_begin() const { return vis_end(); }
    int prm_end() const { return prm_begin() + prm_len; }
    int answer_start() const { return prm_end(); }
    bool is_visual_pos(int p) const { return p >= vis_begin() && p < vis_end(); }
    void validate() const;
    bool operator==(const TokenLayout&) const = default;
};

struct ModelParameters {
    ModelConfig config;

    Tensor text_embed;   // text_vocab x D
    Tensor visual_embed; // visual_vocab x D
    Tensor pos_embed;    // max_seq x D

    struct Layer {
        std::vector<Tensor> wq, wk, wv; // per head: D x d_k
        Tensor wo;                      // D x D
        Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
        Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2; // D x 4D, 4D, 4D x D, D
    };
    std::vector<Layer> layers;
    Tensor lnf_gain, lnf_bias;
    Tensor unembed; // D x text_vocab

    // Visits every tensor with a stable name; checkpointing, the optimizer and
    // the training graph all rely on this single ordering.
    void visit(const std::function<void(const std::string&, Tensor&)>& fn);
    void visit(const std::function<void(const std::string&, const Tensor&)>& fn) const;

    static ModelParameters init(const ModelConfig& cfg, Pcg32& rng);
};

// Additive pre-softmax bias on key columns, active at every layer >= active_from_layer
// (layers are 1-based). Installed once, it persists across decode steps.
struct AttentionBias {
    int active_from_layer = 1;
    std::map<int, double> key_bias; // key position -> bias
};

enum class EdgeClass { vis_to_text, text_to_vis, vis_to_vis };

EdgeClass edge_class_from_string(const std::string& s);
std::string to_string(EdgeClass e);

struct Knockout {
    int layer = 1; // 1-based
    EdgeClass edge = EdgeClass::vis_to_text;
};

// Post-softmax transform of one attention row; must keep the row normalized.
using AttnHook =
    std::function<void(int layer, int head, int query_pos, std::span<double> row, const TokenLayout&)>;

struct ForwardOptions {
    const AttentionBias* bias = nullptr;
    const std::vector<AttnHook>* hooks = nullptr;
    std::optional<Knockout> knockout;
    bool capture_hidden = false;
};

// Attention rows of the current query position, rows[layer][head] over keys 0..q.
struct AttentionTrace {
    int query_pos = 0;
    TokenLayout layout;
    std::vector<std::vector<std::vector<double>>> rows;
};

struct ForwardOutput {
    std::vector<double> logits; // next-token logits at the query position
    AttentionTrace trace;
    // hidden state of the query position after each layer (capture_hidden only)
    std::vector<std::vector<double>> layer_hidden;
};

ForwardOutput forward(const ModelParameters& params, const std::vector<int>& tokens,
                      const TokenLayout& layout, const ForwardOptions& opts = {});

// Argmax decoding for `steps` tokens; ties break to the lowest token index.
// Any bias/hooks in opts persist across steps. Per-step traces are appended to
// step_traces when provided.
std::vector<int> decode_greedy(const ModelParameters& params, const std::vector<int>& tokens,
                               const TokenLayout& layout, int steps, const ForwardOptions& opts = {},
                               std::vector<AttentionTrace>* step_traces = nullptr);

// Per-layer next-token probabilities of `tracked` tokens, read by unembedding
// each layer's query hidden state. Result: [num_layers][tracked.size()].
std::vector<std::vector<double>> logit_lens(const ModelParameters& params, const ForwardOutput& out,
                                            const std::vector<int>& tracked);

ForwardOutput knockout_forward(const ModelParameters& params, const std::vector<int>& tokens,
                               const TokenLayout& layout, int layer, EdgeClass edge);

// Checkpoint: <dir>/manifest.json + <dir>/weights.blob (little-endian doubles).
void save_checkpoint(const ModelParameters& params, const std::string& dir,
                     const std::string& config_hash = "", const std::string& extra_note = "");
ModelParameters load_checkpoint(const std::string& dir);

} // namespace attnguard
