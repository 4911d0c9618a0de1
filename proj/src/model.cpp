// SPDX-License-Identifier: Apache-2.0
#include "attnguard/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "attnguard/common.hpp"
#include "json.hpp"

static_assert(std::endian::native == std::endian::little, "checkpoint blobs are little-endian");

namespace attnguard {

using nlohmann::json;

void ModelConfig::validate() const {
    if (num_layers < 1 || num_heads < 1 || model_dim < 1)
        throw ConfigError("model: dimensions must be positive");
    if (model_dim % num_heads != 0)
        throw ConfigError("model: model_dim must be divisible by num_heads");
    if (visual_vocab < 2 || text_vocab < 2)
        throw ConfigError("model: vocabulary sizes must be at least 2");
    if (content_vocab < 1 || content_vocab > visual_vocab)
        throw ConfigError("model: content_vocab must lie in [1, visual_vocab]");
    if (answer_len < 1) throw ConfigError("model: answer_len must be at least 1");
    if (max_seq < 1) throw ConfigError("model: max_seq must be positive");
}

void TokenLayout::validate() const {
    if (sys_len < 0) throw LayoutError("layout: negative system region");
    if (vis_len < 1) throw LayoutError("layout: visual region must be nonempty");
    if (prm_len < 1) throw LayoutError("layout: prompt region must be nonempty");
}

void ModelParameters::visit(const std::function<void(const std::string&, Tensor&)>& fn) {
    fn("text_embed", text_embed);
    fn("visual_embed", visual_embed);
    fn("pos_embed", pos_embed);
    for (size_t l = 0; l < layers.size(); ++l) {
        Layer& ly = layers[l];
        std::string p = "layer" + std::to_string(l) + ".";
        for (size_t h = 0; h < ly.wq.size(); ++h) {
            std::string hs = ".h" + std::to_string(h);
            fn(p + "wq" + hs, ly.wq[h]);
            fn(p + "wk" + hs, ly.wk[h]);
            fn(p + "wv" + hs, ly.wv[h]);
        }
        fn(p + "wo", ly.wo);
        fn(p + "ln1_gain", ly.ln1_gain);
        fn(p + "ln1_bias", ly.ln1_bias);
        fn(p + "ln2_gain", ly.ln2_gain);
        fn(p + "ln2_bias", ly.ln2_bias);
        fn(p + "ffn_w1", ly.ffn_w1);
        fn(p + "ffn_b1", ly.ffn_b1);
        fn(p + "ffn_w2", ly.ffn_w2);
        fn(p + "ffn_b2", ly.ffn_b2);
    }
    fn("lnf_gain", lnf_gain);
    fn("lnf_bias", lnf_bias);
    fn("unembed", unembed);
}

void ModelParameters::visit(const std::function<void(const std::string&, const Tensor&)>& fn) const {
    const_cast<ModelParameters*>(this)->visit(
        [&fn](const std::string& n, Tensor& t) { fn(n, t); });
}

ModelParameters ModelParameters::init(const ModelConfig& cfg, Pcg32& rng) {
    cfg.validate();
    ModelParameters p;
    p.config = cfg;
    int D = cfg.model_dim, dk = cfg.head_dim();
    auto normal = [&rng](Tensor& t, double std) {
        for (double& v : t.data) v = rng.next_normal() * std;
    };
    const double std0 = 0.02;
    // residual-output projections scaled down so the initial stream stays calm
    const double stdr = std0 / std::sqrt(2.0 * cfg.num_layers);
    // cross-modal mixing is confined to the top half of the stack: the lower
    // half keeps value and output projections at exactly zero, which is a
    // stationary point of every gradient step, so those layers shape the
    // attention trace without ever moving content between positions
    const int local_layers = cfg.num_layers / 2 + 1;

    auto unit = [&rng](int n) {
        std::vector<double> v(n);
        double s = 0.0;
        for (double& x : v) {
            x = rng.next_normal();
            s += x * x;
        }
        s = std::sqrt(s);
        for (double& x : v) x /= s;
        return v;
    };

    // shared feature component of the in-distribution visual symbols, the toy
    // analog of the common direction a frozen encoder gives inputs it was
    // trained on; symbols outside the content range never receive it. It is
    // kept orthogonal to the all-ones vector so layer-norm mean subtraction
    // cannot leak it into other tokens
    std::vector<double> shared = unit(D);
    {
        double m = 0.0;
        for (double v : shared) m += v;
        m /= D;
        double n = 0.0;
        for (double& v : shared) {
            v -= m;
            n += v * v;
        }
        n = std::sqrt(n);
        for (double& v : shared) v /= n;
    }
    // draws a unit direction orthogonal to the all-ones vector (so layer-norm
    // mean subtraction preserves it) and to every previously chosen direction
    std::vector<std::vector<double>> basis{shared};
    auto direction = [&] {
        std::vector<double> v = unit(D);
        double m = 0.0;
        for (double x : v) m += x;
        m /= D;
        for (double& x : v) x -= m;
        for (const auto& b : basis) {
            double dot = 0.0;
            for (int i = 0; i < D; ++i) dot += v[i] * b[i];
            for (int i = 0; i < D; ++i) v[i] -= dot * b[i];
        }
        double n = 0.0;
        for (double x : v) n += x * x;
        n = std::sqrt(n);
        for (double& x : v) x /= n;
        basis.push_back(v);
        return v;
    };
    // reference direction for the saliency heads' constant query
    std::vector<double> probe = direction();
    // modality marker carried by the visual positions of the frozen positional
    // table, and the constant-query direction of the top layer's visual reader
    std::vector<double> marker = direction();
    std::vector<double> gate = direction();

    p.text_embed = Tensor({cfg.text_vocab, D});
    p.visual_embed = Tensor({cfg.visual_vocab, D});
    p.pos_embed = Tensor({cfg.max_seq, D});
    // every embedding row starts exactly orthogonal to the planted directions;
    // only in-distribution visual symbols then receive the shared component,
    // so at init the shared coordinate encodes nothing but "covered by the
    // frozen encoder", and only visual positions receive the modality marker
    auto remove_planted = [&](Tensor& t) {
        int rows = t.shape[0];
        for (int r = 0; r < rows; ++r)
            for (const auto& b : basis) {
                double dot = 0.0;
                for (int i = 0; i < D; ++i) dot += t.data[r * D + i] * b[i];
                for (int i = 0; i < D; ++i) t.data[r * D + i] -= dot * b[i];
            }
    };
    normal(p.text_embed, std0);
    normal(p.visual_embed, 0.05);
    normal(p.pos_embed, std0);
    remove_planted(p.text_embed);
    remove_planted(p.visual_embed);
    remove_planted(p.pos_embed);
    for (int s = 0; s < cfg.content_vocab; ++s)
        for (int i = 0; i < D; ++i) p.visual_embed.data[s * D + i] += shared[i];
    const TokenLayout layout;
    for (int r = layout.vis_begin(); r < std::min(layout.vis_end(), cfg.max_seq); ++r)
        for (int i = 0; i < D; ++i) p.pos_embed.data[r * D + i] += marker[i];

    p.layers.resize(cfg.num_layers);
    for (int l = 0; l < cfg.num_layers; ++l) {
        auto& ly = p.layers[l];
        ly.wq.assign(cfg.num_heads, Tensor({D, dk}));
        ly.wk.assign(cfg.num_heads, Tensor({D, dk}));
        ly.wv.assign(cfg.num_heads, Tensor({D, dk}));
        for (int h = 0; h < cfg.num_heads; ++h) {
            normal(ly.wq[h], std0);
            normal(ly.wk[h], std0);
        }
        ly.wo = Tensor({D, D});
        // value projections start at zero everywhere so the values a layer
        // learns are spanned by the hidden states it was actually trained on
        if (l < local_layers) {
            std::fill(ly.wo.data.begin(), ly.wo.data.end(), 0.0);
        } else {
            normal(ly.wo, stdr);
        }
        // the two layers just below the mixing boundary carry fixed
        // content-saliency heads: every query carries a constant component
        // (from the frozen attention-path norm bias) and keys project onto
        // the shared visual component with a negative sign, so these heads
        // rest away from in-distribution symbols and swing toward anything
        // outside the embedding's training range; with the value path zeroed
        // they shape the trace but never the computation, and none of their
        // parameters ever receives a gradient
        bool saliency = l >= local_layers - 2 && l < local_layers;
        if (saliency) {
            const double kq = 0.5, kk = 5.0;
            for (int h = 0; h < cfg.num_heads; ++h) {
                std::vector<double> u = unit(dk);
                for (int i = 0; i < D; ++i)
                    for (int j = 0; j < dk; ++j) {
                        ly.wq[h].data[i * dk + j] = kq * probe[i] * u[j];
                        ly.wk[h].data[i * dk + j] = -kk * shared[i] * u[j];
                    }
            }
        }
        // the first mixing layer keeps zero query/key projections, another
        // gradient stationary point: its attention stays exactly uniform, so
        // every visual token keeps non-negligible weight at the layer the
        // prune set is read from
        if (l == local_layers && l < cfg.num_layers) {
            for (int h = 0; h < cfg.num_heads; ++h) {
                std::fill(ly.wq[h].data.begin(), ly.wq[h].data.end(), 0.0);
                std::fill(ly.wk[h].data.begin(), ly.wk[h].data.end(), 0.0);
            }
        }
        // the top layer is a fixed visual reader: a constant query (from the
        // frozen attention-path norm bias) against keys projecting onto the
        // positional modality marker, so every query spreads its mass over the
        // visual region while text keys rest at exactly zero logit. The
        // training default freezes these projections, so a value-path attack
        // can only ever read the visual tokens the purifier controls
        bool reader = l == cfg.num_layers - 1 && l > local_layers;
        if (reader) {
            const double kq = 0.5, kk = 3.0;
            for (int h = 0; h < cfg.num_heads; ++h) {
                std::vector<double> u = unit(dk);
                for (int i = 0; i < D; ++i)
                    for (int j = 0; j < dk; ++j) {
                        ly.wq[h].data[i * dk + j] = kq * gate[i] * u[j];
                        ly.wk[h].data[i * dk + j] = kk * marker[i] * u[j];
                    }
            }
        }
        ly.ln1_gain = Tensor({D});
        ly.ln1_bias = Tensor({D});
        ly.ln2_gain = Tensor({D});
        ly.ln2_bias = Tensor({D});
        std::fill(ly.ln1_gain.data.begin(), ly.ln1_gain.data.end(), 1.0);
        std::fill(ly.ln2_gain.data.begin(), ly.ln2_gain.data.end(), 1.0);
        // constant query component for the saliency heads; the attention-path
        // norm parameters of a zero-value layer never receive gradients, so
        // this bias is permanent and the heads' polarity never flips
        if (saliency)
            for (int i = 0; i < D; ++i) ly.ln1_bias.data[i] = 8.0 * probe[i];
        // constant query component for the visual reader; kept by the training
        // default's freeze list rather than by a dead value path
        if (reader)
            for (int i = 0; i < D; ++i) ly.ln1_bias.data[i] = 8.0 * gate[i];
        ly.ffn_w1 = Tensor({D, 4 * D});
        ly.ffn_b1 = Tensor({4 * D});
        ly.ffn_w2 = Tensor({4 * D, D});
        ly.ffn_b2 = Tensor({D});
        normal(ly.ffn_w1, std0);
        // below the upper saliency layer the feed-forward output projection
        // starts at zero and the training default keeps it frozen, so the
        // residual stream entering the saliency heads is exactly the embedding
        // sum and the planted key geometry survives training unchanged
        if (l >= local_layers - 1) normal(ly.ffn_w2, stdr);
    }
    p.lnf_gain = Tensor({D});
    p.lnf_bias = Tensor({D});
    std::fill(p.lnf_gain.data.begin(), p.lnf_gain.data.end(), 1.0);
    p.unembed = Tensor({D, cfg.text_vocab});
    normal(p.unembed, std0);
    return p;
}

EdgeClass edge_class_from_string(const std::string& s) {
    if (s == "vis_to_text") return EdgeClass::vis_to_text;
    if (s == "text_to_vis") return EdgeClass::text_to_vis;
    if (s == "vis_to_vis") return EdgeClass::vis_to_vis;
    throw ArgumentError("unknown attention edge class: " + s);
}

std::string to_string(EdgeClass e) {
    switch (e) {
        case EdgeClass::vis_to_text: return "vis_to_text";
        case EdgeClass::text_to_vis: return "text_to_vis";
        case EdgeClass::vis_to_vis: return "vis_to_vis";
    }
    throw ArgumentError("unknown attention edge class");
}

namespace {

void softmax_row(std::span<double> row) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    if (mx <= kDegenerateRowThreshold)
        throw DegenerateRowError("attention row entirely at the negative sentinel");
    double z = 0.0;
    for (double& v : row) {
        v = std::exp(v - mx);
        z += v;
    }
    for (double& v : row) v /= z;
}

void layer_norm_row(const double* x, double* out, const double* gain, const double* bias, int d) {
    double m = 0.0;
    for (int j = 0; j < d; ++j) m += x[j];
    m /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
        double dv = x[j] - m;
        var += dv * dv;
    }
    var /= d;
    double s = 1.0 / std::sqrt(var + 1e-5);
    for (int j = 0; j < d; ++j) out[j] = (x[j] - m) * s * gain[j] + bias[j];
}

bool in_knocked_block(EdgeClass edge, bool q_vis, bool k_vis) {
    switch (edge) {
        case EdgeClass::vis_to_text: return !q_vis && k_vis;
        case EdgeClass::text_to_vis: return q_vis && !k_vis;
        case EdgeClass::vis_to_vis: return q_vis && k_vis;
    }
    return false;
}

} // namespace

ForwardOutput forward(const ModelParameters& params, const std::vector<int>& tokens,
                      const TokenLayout& layout, const ForwardOptions& opts) {
    const ModelConfig& cfg = params.config;
    layout.validate();
    int T = static_cast<int>(tokens.size());
    if (T > cfg.max_seq)
        throw CapacityError("forward: sequence length " + std::to_string(T) + " exceeds max_seq " +
                            std::to_string(cfg.max_seq));
    if (T < layout.prm_end())
        throw LayoutError("forward: token count " + std::to_string(T) +
                          " shorter than layout prefix " + std::to_string(layout.prm_end()));
    int D = cfg.model_dim, H = cfg.num_heads, dk = cfg.head_dim();
    double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

    // embeddings
    std::vector<double> x(static_cast<size_t>(T) * D);
    for (int i = 0; i < T; ++i) {
        int tok = tokens[i];
        const Tensor& table = layout.is_visual_pos(i) ? params.visual_embed : params.text_embed;
        if (tok < 0 || tok >= table.shape[0])
            throw IndexError("forward: token id " + std::to_string(tok) + " out of vocabulary at position " +
                             std::to_string(i));
        for (int j = 0; j < D; ++j)
            x[static_cast<size_t>(i) * D + j] = table.at(tok, j) + params.pos_embed.at(i, j);
    }

    ForwardOutput out;
    out.trace.query_pos = T - 1;
    out.trace.layout = layout;
    out.trace.rows.assign(cfg.num_layers, std::vector<std::vector<double>>(H));
    if (opts.capture_hidden) out.layer_hidden.reserve(cfg.num_layers);

    std::vector<double> ln(static_cast<size_t>(T) * D);
    std::vector<double> q(static_cast<size_t>(T) * dk), k(static_cast<size_t>(T) * dk),
        v(static_cast<size_t>(T) * dk);
    std::vector<double> scores(static_cast<size_t>(T) * T);
    std::vector<double> ctx(static_cast<size_t>(T) * D);
    std::vector<double> proj(static_cast<size_t>(T) * D);
    std::vector<double> ffn_h(static_cast<size_t>(T) * 4 * D);

    for (int l = 0; l < cfg.num_layers; ++l) {
        const ModelParameters::Layer& ly = params.layers[l];
        int layer_1b = l + 1;
        bool bias_active = opts.bias && layer_1b >= opts.bias->active_from_layer;
        bool knocked = opts.knockout && opts.knockout->layer == layer_1b;

        for (int i = 0; i < T; ++i)
            layer_norm_row(&x[static_cast<size_t>(i) * D], &ln[static_cast<size_t>(i) * D],
                           ly.ln1_gain.data.data(), ly.ln1_bias.data.data(), D);

        std::fill(ctx.begin(), ctx.end(), 0.0);
        for (int h = 0; h < H; ++h) {
            matmul_raw(ln.data(), ly.wq[h].data.data(), q.data(), T, D, dk, false, false);
            matmul_raw(ln.data(), ly.wk[h].data.data(), k.data(), T, D, dk, false, false);
            matmul_raw(ln.data(), ly.wv[h].data.data(), v.data(), T, D, dk, false, false);
            matmul_raw(q.data(), k.data(), scores.data(), T, dk, T, false, true);
            for (int i = 0; i < T; ++i) {
                double* row = &scores[static_cast<size_t>(i) * T];
                for (int j = 0; j <= i; ++j) row[j] *= inv_sqrt_dk;
                for (int j = i + 1; j < T; ++j) row[j] = kNegSentinel;
                if (bias_active)
                    for (const auto& [key, b] : opts.bias->key_bias)
                        if (key <= i) row[key] += b;
                if (knocked) {
                    bool q_vis = layout.is_visual_pos(i);
                    for (int j = 0; j <= i; ++j)
                        if (in_knocked_block(opts.knockout->edge, q_vis, layout.is_visual_pos(j)))
                            row[j] = kNegSentinel;
                }
                softmax_row(std::span<double>(row, T));
                if (opts.hooks) {
                    std::span<double> visible(row, static_cast<size_t>(i) + 1);
                    for (const AttnHook& hook : *opts.hooks) hook(layer_1b, h, i, visible, layout);
                    double s = 0.0;
                    for (double w : visible) s += w;
                    if (std::fabs(s - 1.0) > 1e-9)
                        throw ArgumentError("attention hook broke row normalization at layer " +
                                            std::to_string(layer_1b));
                }
            }
            out.trace.rows[l][h].assign(&scores[static_cast<size_t>(T - 1) * T],
                                        &scores[static_cast<size_t>(T - 1) * T] + T);
            // ctx[:, h*dk : (h+1)*dk] = scores * v
            matmul_raw(scores.data(), v.data(), q.data(), T, T, dk, false, false);
            for (int i = 0; i < T; ++i)
                std::copy_n(&q[static_cast<size_t>(i) * dk], dk,
                            &ctx[static_cast<size_t>(i) * D + static_cast<size_t>(h) * dk]);
        }
        matmul_raw(ctx.data(), ly.wo.data.data(), proj.data(), T, D, D, false, false);
        for (size_t i = 0; i < x.size(); ++i) x[i] += proj[i];

        for (int i = 0; i < T; ++i)
            layer_norm_row(&x[static_cast<size_t>(i) * D], &ln[static_cast<size_t>(i) * D],
                           ly.ln2_gain.data.data(), ly.ln2_bias.data.data(), D);
        matmul_raw(ln.data(), ly.ffn_w1.data.data(), ffn_h.data(), T, D, 4 * D, false, false);
        for (int i = 0; i < T; ++i)
            for (int j = 0; j < 4 * D; ++j) {
                double& hv = ffn_h[static_cast<size_t>(i) * 4 * D + j];
                hv = std::max(hv + ly.ffn_b1.data[j], 0.0);
            }
        matmul_raw(ffn_h.data(), ly.ffn_w2.data.data(), proj.data(), T, 4 * D, D, false, false);
        for (int i = 0; i < T; ++i)
            for (int j = 0; j < D; ++j)
                x[static_cast<size_t>(i) * D + j] += proj[static_cast<size_t>(i) * D + j] + ly.ffn_b2.data[j];

        if (opts.capture_hidden)
            out.layer_hidden.emplace_back(x.begin() + static_cast<size_t>(T - 1) * D,
                                          x.begin() + static_cast<size_t>(T) * D);
    }

    std::vector<double> yq(D);
    layer_norm_row(&x[static_cast<size_t>(T - 1) * D], yq.data(), params.lnf_gain.data.data(),
                   params.lnf_bias.data.data(), D);
    out.logits.assign(cfg.text_vocab, 0.0);
    matmul_raw(yq.data(), params.unembed.data.data(), out.logits.data(), 1, D, cfg.text_vocab, false, false);
    return out;
}

std::vector<int> decode_greedy(const ModelParameters& params, const std::vector<int>& tokens,
                               const TokenLayout& layout, int steps, const ForwardOptions& opts,
                               std::vector<AttentionTrace>* step_traces) {
    if (steps < 1) throw ArgumentError("decode_greedy: steps must be at least 1");
    std::vector<int> seq = tokens;
    std::vector<int> generated;
    for (int s = 0; s < steps; ++s) {
        ForwardOutput out = forward(params, seq, layout, opts);
        int best = 0;
        for (size_t j = 1; j < out.logits.size(); ++j)
            if (out.logits[j] > out.logits[best]) best = static_cast<int>(j);
        generated.push_back(best);
        seq.push_back(best);
        if (step_traces) step_traces->push_back(std::move(out.trace));
    }
    return seq;
}

std::vector<std::vector<double>> logit_lens(const ModelParameters& params, const ForwardOutput& out,
                                            const std::vector<int>& tracked) {
    if (out.layer_hidden.empty())
        throw ArgumentError("logit_lens: forward output has no captured hidden states");
    int D = params.config.model_dim;
    int V = params.config.text_vocab;
    for (int t : tracked)
        if (t < 0 || t >= V) throw IndexError("logit_lens: tracked token out of vocabulary");
    std::vector<std::vector<double>> result;
    std::vector<double> y(D), logits(V);
    for (const std::vector<double>& h : out.layer_hidden) {
        layer_norm_row(h.data(), y.data(), params.lnf_gain.data.data(), params.lnf_bias.data.data(), D);
        matmul_raw(y.data(), params.unembed.data.data(), logits.data(), 1, D, V, false, false);
        softmax_row(std::span<double>(logits.data(), V));
        std::vector<double> picked;
        picked.reserve(tracked.size());
        for (int t : tracked) picked.push_back(logits[t]);
        result.push_back(std::move(picked));
    }
    return result;
}

ForwardOutput knockout_forward(const ModelParameters& params, const std::vector<int>& tokens,
                               const TokenLayout& layout, int layer, EdgeClass edge) {
    if (layer < 1 || layer > params.config.num_layers)
        throw ArgumentError("knockout_forward: layer out of range");
    ForwardOptions opts;
    opts.knockout = Knockout{layer, edge};
    return forward(params, tokens, layout, opts);
}

// ---------------------------------------------------------------------------
// checkpoint io

static json config_to_json(const ModelConfig& c) {
    return json{{"num_layers", c.num_layers}, {"num_heads", c.num_heads},
                {"model_dim", c.model_dim},   {"visual_vocab", c.visual_vocab},
                {"text_vocab", c.text_vocab}, {"max_seq", c.max_seq},
                {"answer_len", c.answer_len}};
}

static ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.num_layers = j.at("num_layers").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.model_dim = j.at("model_dim").get<int>();
    c.visual_vocab = j.at("visual_vocab").get<int>();
    c.text_vocab = j.at("text_vocab").get<int>();
    c.max_seq = j.at("max_seq").get<int>();
    c.answer_len = j.at("answer_len").get<int>();
    c.validate();
    return c;
}

void save_checkpoint(const ModelParameters& params, const std::string& dir,
                     const std::string& config_hash, const std::string& extra_note) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    json manifest;
    manifest["magic"] = "MLVLM";
    manifest["version"] = 1;
    manifest["tool_version"] = std::string(kToolVersion);
    if (!config_hash.empty()) manifest["config_hash"] = config_hash;
    if (!extra_note.empty()) manifest["note"] = extra_note;
    manifest["config"] = config_to_json(params.config);
    json tensors = json::array();

    std::ofstream blob(fs::path(dir) / "weights.blob", std::ios::binary);
    if (!blob) throw IoError("save_checkpoint: cannot open blob for writing in " + dir);
    size_t offset = 0;
    params.visit([&](const std::string& name, const Tensor& t) {
        tensors.push_back(json{{"name", name},
                               {"shape", t.shape},
                               {"offset", offset},
                               {"count", t.data.size()}});
        blob.write(reinterpret_cast<const char*>(t.data.data()),
                   static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        offset += t.data.size() * sizeof(double);
    });
    blob.close();
    manifest["tensors"] = std::move(tensors);

    std::ofstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw IoError("save_checkpoint: cannot open manifest for writing in " + dir);
    mf << manifest.dump(2) << "\n";
}

ModelParameters load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw IoError("load_checkpoint: cannot open manifest in " + dir);
    json manifest;
    try {
        manifest = json::parse(mf);
    } catch (const json::exception& e) {
        throw FormatError(std::string("load_checkpoint: bad manifest: ") + e.what());
    }
    if (manifest.value("magic", "") != "MLVLM")
        throw FormatError("load_checkpoint: bad magic");
    if (manifest.value("version", -1) != 1)
        throw FormatError("load_checkpoint: unsupported format version");
    ModelConfig cfg = config_from_json(manifest.at("config"));

    std::ifstream blob(fs::path(dir) / "weights.blob", std::ios::binary);
    if (!blob) throw IoError("load_checkpoint: cannot open blob in " + dir);
    std::vector<char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());

    std::map<std::string, const json*> entries;
    for (const json& t : manifest.at("tensors")) entries[t.at("name").get<std::string>()] = &t;

    Pcg32 dummy(0, 0);
    ModelParameters params = ModelParameters::init(cfg, dummy);
    params.visit([&](const std::string& name, Tensor& t) {
        auto it = entries.find(name);
        if (it == entries.end())
            throw CorruptionError("load_checkpoint: manifest is missing tensor " + name);
        const json& e = *it->second;
        std::vector<int> shape = e.at("shape").get<std::vector<int>>();
        size_t count = e.at("count").get<size_t>();
        size_t offset = e.at("offset").get<size_t>();
        if (Tensor::numel_of(shape) != static_cast<long long>(count))
            throw CorruptionError("load_checkpoint: shape/count mismatch for tensor " + name);
        if (shape != t.shape)
            throw CorruptionError("load_checkpoint: unexpected shape for tensor " + name);
        if (offset + count * sizeof(double) > bytes.size())
            throw CorruptionError("load_checkpoint: blob truncated at tensor " + name);
        std::copy_n(reinterpret_cast<const double*>(bytes.data() + offset), count, t.data.begin());
    });
    return params;
}

} // namespace attnguard
