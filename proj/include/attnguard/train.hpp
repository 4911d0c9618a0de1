// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "attnguard/detector.hpp"
#include "attnguard/model.hpp"
#include "attnguard/optim.hpp"
#include "attnguard/task.hpp"

namespace attnguard {

enum class RegKind { ratio_evasion, score_evasion, uniformity };

RegKind reg_kind_from_string(const std::string& s);
std::string to_string(RegKind k);

struct RegularizerSpec {
    RegKind kind = RegKind::uniformity;
    double weight = 0.1;
    // ratio_evasion: hinge above this vision/prompt ratio cap
    double ratio_cap = 4.0;
};

struct TrainConfig {
    int batch_size = 32;
    int epochs = 30;
    // clean-task phase before the poisoned fine-tune; the attacker of the
    // threat model fine-tunes a victim that already solves the task
    int pretrain_epochs = 6;
    double pretrain_lr = 3e-3;
    // parameters excluded from updates whenever no tune restriction is in
    // force, by ModelParameters::visit name. The embeddings and positional
    // table stand in for a frozen tokenizer and vision encoder, so a trigger
    // can only gain influence through attention; the zeroed feed-forward
    // output projections of the three local layers stay zero, keeping the
    // stream under the saliency heads equal to the embedding sum; and the
    // top layer's planted reader pattern (query/key projections and its
    // attention-path norm) survives the clean phase unchanged
    std::vector<std::string> freeze = {"text_embed", "visual_embed", "pos_embed",
                                       "layer0.ffn_w2", "layer0.ffn_b2",
                                       "layer1.ffn_w2", "layer1.ffn_b2",
                                       "layer2.ffn_w2", "layer2.ffn_b2",
                                       "layer5.wq",      "layer5.wk",
                                       "layer5.ln1_gain", "layer5.ln1_bias"};
    // when nonempty, this list alone defines the update set: exactly the
    // parameters whose name starts with one of these prefixes are trained and
    // the freeze list is not consulted. The default restricts the poisoned
    // fine-tune to the attention projections of the last block (a
    // parameter-efficient attack), which keeps the implant inside the layers
    // the purifier masks
    std::vector<std::string> tune = {"layer5.wq", "layer5.wk", "layer5.wv", "layer5.wo"};
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::vector<RegularizerSpec> regularizers;
    // detection window the adaptive attacker targets
    DetectionConfig detection;
};

// Query-position attention rows recorded while building the training graph;
// rows[sample][layer][head] is a 1 x T node.
struct BatchAttention {
    std::vector<std::vector<std::vector<Val>>> query_rows;
};

// Builds the full next-token loss for a minibatch on the tape. `leaves` must
// hold the parameter tensors in ModelParameters::visit order.
Val build_model_loss(GradientTape& tape, const std::vector<Val>& leaves, const ModelConfig& cfg,
                     const TaskSpec& task, const std::vector<const Sample*>& batch,
                     const DetectionConfig& det = {}, const std::vector<RegularizerSpec>& regs = {},
                     const ReferenceStats* stats = nullptr, BatchAttention* attn_out = nullptr);

// Differentiable evasion penalty over the poisoned rows of a batch.
Val adaptive_regularizer(GradientTape& tape, RegKind kind, const BatchAttention& attn,
                         const std::vector<size_t>& poisoned_samples, const TokenLayout& layout,
                         const DetectionConfig& det, const ReferenceStats* stats, double ratio_cap);

struct TrainResult {
    ModelParameters params;
    std::vector<double> loss_history; // mean loss per epoch
};

TrainResult train(const ModelParameters& init, const std::vector<Sample>& dataset,
                  const TaskSpec& task, const TrainConfig& cfg, uint64_t seed,
                  const ReferenceStats* stats = nullptr);

// Clean pretraining followed by fine-tuning on the poisoned mixture; the
// loss history concatenates both phases.
TrainResult train_pipeline(const ModelParameters& init, const TaskSpec& task,
                           const TriggerSpec& trigger, const PoisonConfig& poison,
                           const TrainConfig& cfg, uint64_t seed,
                           const ReferenceStats* stats = nullptr);

// Fraction (in percent) of greedy decodings equal to the target sequence.
double eval_asr(const ModelParameters& params, const TaskSpec& task,
                const std::vector<Sample>& triggered, const std::vector<int>& target);
// Fraction (in percent) of greedy decodings equal to each sample's answer.
double eval_acc(const ModelParameters& params, const TaskSpec& task, const std::vector<Sample>& samples);

} // namespace attnguard
