// SPDX-License-Identifier: Apache-2.0
#include "attnguard/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "attnguard/common.hpp"

namespace attnguard {

RegKind reg_kind_from_string(const std::string& s) {
    if (s == "ratio_evasion") return RegKind::ratio_evasion;
    if (s == "score_evasion") return RegKind::score_evasion;
    if (s == "uniformity") return RegKind::uniformity;
    throw ArgumentError("unknown regularizer kind: " + s);
}

std::string to_string(RegKind k) {
    switch (k) {
        case RegKind::ratio_evasion: return "ratio_evasion";
        case RegKind::score_evasion: return "score_evasion";
        case RegKind::uniformity: return "uniformity";
    }
    throw ArgumentError("unknown regularizer kind");
}

namespace {

// Positions of each parameter tensor within the visit() ordering.
struct ParamIndex {
    int text_embed = 0, visual_embed = 1, pos_embed = 2;
    int heads = 0, per_layer = 0;
    int layers = 0;

    int layer_base(int l) const { return 3 + l * per_layer; }
    int wq(int l, int h) const { return layer_base(l) + 3 * h; }
    int wk(int l, int h) const { return layer_base(l) + 3 * h + 1; }
    int wv(int l, int h) const { return layer_base(l) + 3 * h + 2; }
    int wo(int l) const { return layer_base(l) + 3 * heads; }
    int ln1_gain(int l) const { return layer_base(l) + 3 * heads + 1; }
    int ln1_bias(int l) const { return layer_base(l) + 3 * heads + 2; }
    int ln2_gain(int l) const { return layer_base(l) + 3 * heads + 3; }
    int ln2_bias(int l) const { return layer_base(l) + 3 * heads + 4; }
    int ffn_w1(int l) const { return layer_base(l) + 3 * heads + 5; }
    int ffn_b1(int l) const { return layer_base(l) + 3 * heads + 6; }
    int ffn_w2(int l) const { return layer_base(l) + 3 * heads + 7; }
    int ffn_b2(int l) const { return layer_base(l) + 3 * heads + 8; }
    int lnf_gain() const { return 3 + layers * per_layer; }
    int lnf_bias() const { return lnf_gain() + 1; }
    int unembed() const { return lnf_gain() + 2; }
    int total() const { return lnf_gain() + 3; }

    static ParamIndex build(const ModelConfig& cfg) {
        ParamIndex ix;
        ix.heads = cfg.num_heads;
        ix.layers = cfg.num_layers;
        ix.per_layer = 3 * cfg.num_heads + 9;
        return ix;
    }
};

Tensor causal_mask(int T) {
    Tensor m({T, T});
    for (int i = 0; i < T; ++i)
        for (int j = i + 1; j < T; ++j) m.at(i, j) = kNegSentinel;
    return m;
}

Val mean_of(GradientTape& tape, const std::vector<Val>& terms) {
    if (terms.empty()) return tape.leaf(Tensor::scalar(0.0));
    Val acc = terms[0];
    for (size_t i = 1; i < terms.size(); ++i) acc = tape.add(acc, terms[i]);
    return tape.scale(acc, 1.0 / static_cast<double>(terms.size()));
}

} // namespace

Val build_model_loss(GradientTape& tape, const std::vector<Val>& leaves, const ModelConfig& cfg,
                     const TaskSpec& task, const std::vector<const Sample*>& batch,
                     const DetectionConfig& det, const std::vector<RegularizerSpec>& regs,
                     const ReferenceStats* stats, BatchAttention* attn_out) {
    if (batch.empty()) throw ArgumentError("build_model_loss: empty batch");
    const TokenLayout layout = task.layout();
    const ParamIndex ix = ParamIndex::build(cfg);
    if (static_cast<int>(leaves.size()) != ix.total())
        throw ArgumentError("build_model_loss: leaf count does not match the parameter layout");

    const int B = static_cast<int>(batch.size());
    const int T = layout.prm_end() + cfg.answer_len;
    const int H = cfg.num_heads;
    const int q_pos = layout.answer_start() - 1;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));

    // Capture the detection window's query rows whenever anything needs them.
    bool want_rows = attn_out != nullptr || !regs.empty();
    if (want_rows) det.validate(cfg.num_layers);
    BatchAttention local_rows;
    BatchAttention& rows = attn_out ? *attn_out : local_rows;
    if (want_rows)
        rows.query_rows.assign(static_cast<size_t>(B),
                               std::vector<std::vector<Val>>(static_cast<size_t>(det.num_layers)));

    std::vector<int> positions(T);
    std::iota(positions.begin(), positions.end(), 0);
    Val pos = tape.gather_rows(leaves[ix.pos_embed], positions);

    std::vector<Val> per_sample;
    per_sample.reserve(static_cast<size_t>(B));
    for (const Sample* s : batch) {
        std::vector<int> toks = s->full_tokens(task);
        if (static_cast<int>(toks.size()) != T)
            throw ArgumentError("build_model_loss: sample length does not match the layout");
        std::vector<int> sys(toks.begin(), toks.begin() + layout.vis_begin());
        std::vector<int> vis(toks.begin() + layout.vis_begin(), toks.begin() + layout.vis_end());
        std::vector<int> tail(toks.begin() + layout.prm_begin(), toks.end());
        Val x = tape.concat_rows({tape.gather_rows(leaves[ix.text_embed], sys),
                                  tape.gather_rows(leaves[ix.visual_embed], vis),
                                  tape.gather_rows(leaves[ix.text_embed], tail)});
        per_sample.push_back(tape.add(x, pos));
    }
    Val x = tape.concat_rows(per_sample);
    Val mask = tape.leaf(causal_mask(T));

    for (int l = 0; l < cfg.num_layers; ++l) {
        bool record = want_rows && (l + 1) >= det.start_layer && (l + 1) <= det.end_layer();
        Val ln1 = tape.layer_norm_rows(x, leaves[ix.ln1_gain(l)], leaves[ix.ln1_bias(l)]);
        std::vector<Val> q(H), k(H), v(H);
        for (int h = 0; h < H; ++h) {
            q[h] = tape.matmul(ln1, leaves[ix.wq(l, h)]);
            k[h] = tape.matmul(ln1, leaves[ix.wk(l, h)]);
            v[h] = tape.matmul(ln1, leaves[ix.wv(l, h)]);
        }
        std::vector<Val> ctx_rows;
        ctx_rows.reserve(static_cast<size_t>(B));
        for (int b = 0; b < B; ++b) {
            std::vector<Val> heads;
            heads.reserve(static_cast<size_t>(H));
            for (int h = 0; h < H; ++h) {
                Val qb = tape.slice_rows(q[h], b * T, T);
                Val kb = tape.slice_rows(k[h], b * T, T);
                Val vb = tape.slice_rows(v[h], b * T, T);
                Val scores = tape.add(tape.scale(tape.matmul_nt(qb, kb), inv_sqrt_dk), mask);
                Val attn = tape.softmax_rows(scores);
                if (record)
                    rows.query_rows[b][l + 1 - det.start_layer].push_back(
                        tape.slice_rows(attn, q_pos, 1));
                heads.push_back(tape.matmul(attn, vb));
            }
            ctx_rows.push_back(tape.concat_cols(heads));
        }
        Val ctx = tape.concat_rows(ctx_rows);
        x = tape.add(x, tape.matmul(ctx, leaves[ix.wo(l)]));

        Val ln2 = tape.layer_norm_rows(x, leaves[ix.ln2_gain(l)], leaves[ix.ln2_bias(l)]);
        Val h1 = tape.relu(
            tape.add_row_broadcast(tape.matmul(ln2, leaves[ix.ffn_w1(l)]), leaves[ix.ffn_b1(l)]));
        Val h2 = tape.add_row_broadcast(tape.matmul(h1, leaves[ix.ffn_w2(l)]), leaves[ix.ffn_b2(l)]);
        x = tape.add(x, h2);
    }

    Val lnf = tape.layer_norm_rows(x, leaves[ix.lnf_gain()], leaves[ix.lnf_bias()]);
    Val logits = tape.matmul(lnf, leaves[ix.unembed()]);

    std::vector<Val> answer_rows;
    std::vector<int> targets;
    answer_rows.reserve(static_cast<size_t>(B));
    targets.reserve(static_cast<size_t>(B) * cfg.answer_len);
    for (int b = 0; b < B; ++b) {
        answer_rows.push_back(tape.slice_rows(logits, b * T + q_pos, cfg.answer_len));
        for (int t : batch[static_cast<size_t>(b)]->answer) targets.push_back(t);
    }
    Val loss = tape.cross_entropy(tape.concat_rows(answer_rows), std::move(targets));

    if (!regs.empty()) {
        std::vector<size_t> poisoned;
        for (size_t b = 0; b < batch.size(); ++b)
            if (batch[b]->poisoned) poisoned.push_back(b);
        for (const RegularizerSpec& r : regs) {
            Val pen =
                adaptive_regularizer(tape, r.kind, rows, poisoned, layout, det, stats, r.ratio_cap);
            loss = tape.add(loss, tape.scale(pen, r.weight));
        }
    }
    return loss;
}

Val adaptive_regularizer(GradientTape& tape, RegKind kind, const BatchAttention& attn,
                         const std::vector<size_t>& poisoned_samples, const TokenLayout& layout,
                         const DetectionConfig& det, const ReferenceStats* stats, double ratio_cap) {
    const int vb = layout.vis_begin();
    const int vn = layout.vis_len;
    const int pb = layout.prm_begin();
    const int pn = layout.prm_len;

    auto ratio_of = [&](Val row) {
        Val vis = tape.sum(tape.slice_cols(row, vb, vn));
        Val prm = tape.sum(tape.slice_cols(row, pb, pn));
        // additive floor: smooth everywhere, negligible against real prompt mass
        return tape.div(vis, tape.add_scalar(prm, det.ratio_floor));
    };

    std::vector<Val> terms;
    switch (kind) {
        case RegKind::ratio_evasion:
            for (size_t b : poisoned_samples)
                for (const auto& layer : attn.query_rows[b])
                    for (Val row : layer)
                        terms.push_back(tape.relu(tape.add_scalar(ratio_of(row), -ratio_cap)));
            break;
        case RegKind::score_evasion: {
            if (!stats)
                throw ArgumentError("score_evasion regularizer needs reference statistics");
            for (size_t b : poisoned_samples) {
                Val acc = tape.leaf(Tensor::scalar(0.0));
                size_t i = 0;
                for (const auto& layer : attn.query_rows[b])
                    for (Val row : layer) {
                        if (i >= stats->mu.size())
                            throw DimensionError("score_evasion: more attention rows than statistics");
                        Val z = tape.scale(tape.add_scalar(ratio_of(row), -stats->mu[i]),
                                           1.0 / stats->sigma[i]);
                        acc = tape.add(acc, tape.mul(z, z));
                        ++i;
                    }
                Val d = tape.sqrt_elem(acc);
                terms.push_back(tape.relu(tape.add_scalar(d, -stats->gamma)));
            }
            break;
        }
        case RegKind::uniformity:
            for (size_t b : poisoned_samples)
                for (const auto& layer : attn.query_rows[b])
                    for (Val row : layer) {
                        Val vis_row = tape.slice_cols(row, vb, vn);
                        // sum of squared deviations as sum(x^2) - (sum x)^2 / n
                        Val sq = tape.sum(tape.mul(vis_row, vis_row));
                        Val s = tape.sum(vis_row);
                        terms.push_back(tape.sub(sq, tape.scale(tape.mul(s, s), 1.0 / vn)));
                    }
            break;
    }
    return mean_of(tape, terms);
}

TrainResult train(const ModelParameters& init, const std::vector<Sample>& dataset,
                  const TaskSpec& task, const TrainConfig& cfg, uint64_t seed,
                  const ReferenceStats* stats) {
    if (dataset.empty()) throw TrainingError("train: empty dataset");
    if (cfg.batch_size < 1 || cfg.epochs < 1 || cfg.lr <= 0.0)
        throw ConfigError("train: batch size and epochs must be >= 1 and lr > 0");
    task.validate(init.config);

    TrainResult result;
    result.params = init;

    std::vector<Tensor*> param_ptrs;
    std::vector<bool> frozen;
    result.params.visit([&](const std::string& name, Tensor& t) {
        param_ptrs.push_back(&t);
        // a nonempty tune list fully defines the update set; the freeze list
        // governs unrestricted phases
        bool f;
        if (!cfg.tune.empty())
            f = std::none_of(cfg.tune.begin(), cfg.tune.end(), [&name](const std::string& p) {
                return name.rfind(p, 0) == 0;
            });
        else
            f = std::find(cfg.freeze.begin(), cfg.freeze.end(), name) != cfg.freeze.end();
        frozen.push_back(f);
    });
    std::vector<Tensor*> live_ptrs;
    for (size_t i = 0; i < param_ptrs.size(); ++i)
        if (!frozen[i]) live_ptrs.push_back(param_ptrs[i]);

    AdamState adam;
    adam.lr = cfg.lr;
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    adam.eps = cfg.eps;

    Pcg32 shuffle_rng(seed, rng_stream::kTrainShuffle);
    std::vector<size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        int steps = 0;
        for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.batch_size)) {
            size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
            std::vector<const Sample*> batch;
            batch.reserve(end - begin);
            for (size_t i = begin; i < end; ++i) batch.push_back(&dataset[order[i]]);

            GradientTape tape;
            std::vector<Val> leaves;
            leaves.reserve(param_ptrs.size());
            for (Tensor* p : param_ptrs) leaves.push_back(tape.leaf(*p));

            Val loss = build_model_loss(tape, leaves, result.params.config, task, batch,
                                        cfg.detection, cfg.regularizers, stats);
            double lv = tape.value(loss).data[0];
            if (!std::isfinite(lv))
                throw TrainingError("train: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                    ", step " + std::to_string(steps + 1));
            tape.backward(loss);

            std::vector<const Tensor*> grads;
            grads.reserve(live_ptrs.size());
            for (size_t i = 0; i < leaves.size(); ++i)
                if (!frozen[i]) grads.push_back(&tape.grad(leaves[i]));
            adam_step(live_ptrs, grads, adam);

            epoch_loss += lv;
            ++steps;
        }
        result.loss_history.push_back(epoch_loss / steps);
    }
    return result;
}

TrainResult train_pipeline(const ModelParameters& init, const TaskSpec& task,
                           const TriggerSpec& trigger, const PoisonConfig& poison,
                           const TrainConfig& cfg, uint64_t seed, const ReferenceStats* stats) {
    TrainResult result{init, {}};
    if (cfg.pretrain_epochs > 0) {
        Pcg32 clean_rng(seed, rng_stream::kPretrainData);
        std::vector<Sample> clean = gen_clean(task, clean_rng, poison.size);
        TrainConfig pre = cfg;
        pre.epochs = cfg.pretrain_epochs;
        pre.lr = cfg.pretrain_lr;
        pre.regularizers.clear();
        // the freeze list (frozen encoder analog and positional table) applies
        // to both phases; only the tune restriction is attack-specific
        pre.tune.clear();
        result = train(init, clean, task, pre, seed);
    }
    Pcg32 data_rng(seed, rng_stream::kTrainData);
    std::vector<Sample> dataset = build_dataset(task, trigger, poison, data_rng);
    TrainResult fine = train(result.params, dataset, task, cfg, seed, stats);
    result.params = std::move(fine.params);
    result.loss_history.insert(result.loss_history.end(), fine.loss_history.begin(),
                               fine.loss_history.end());
    return result;
}

namespace {

double fraction_matching(const ModelParameters& params, const TaskSpec& task,
                         const std::vector<Sample>& samples,
                         const std::function<const std::vector<int>&(const Sample&)>& expect) {
    if (samples.empty()) throw ArgumentError("eval: empty sample set");
    const TokenLayout layout = task.layout();
    int hits = 0;
    for (const Sample& s : samples) {
        std::vector<int> in = s.input_tokens(task);
        std::vector<int> seq = decode_greedy(params, in, layout, params.config.answer_len);
        std::vector<int> out(seq.begin() + static_cast<long>(in.size()), seq.end());
        if (out == expect(s)) ++hits;
    }
    return 100.0 * hits / static_cast<double>(samples.size());
}

} // namespace

double eval_asr(const ModelParameters& params, const TaskSpec& task,
                const std::vector<Sample>& triggered, const std::vector<int>& target) {
    return fraction_matching(params, task, triggered,
                             [&target](const Sample&) -> const std::vector<int>& { return target; });
}

double eval_acc(const ModelParameters& params, const TaskSpec& task,
                const std::vector<Sample>& samples) {
    return fraction_matching(params, task, samples,
                             [](const Sample& s) -> const std::vector<int>& { return s.answer; });
}

} // namespace attnguard
