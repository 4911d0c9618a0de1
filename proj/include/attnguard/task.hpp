// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "attnguard/model.hpp"
#include "attnguard/rng.hpp"

namespace attnguard {

// Toy multimodal task: a grid of visual symbols whose majority symbol is the
// answer (ties resolve to the lowest symbol). Forces the model to genuinely
// read the visual tokens.
struct TaskSpec {
    int grid_side = 4;
    int symbol_count = 4;   // content symbols 0..symbol_count-1 in the visual vocabulary
    int answer_classes = 4; // == symbol_count for the majority task
    int answer_len = 1;     // clean answers repeat the class token in K=2 mode
    std::vector<int> prompt_tokens = {2, 3, 4, 5};
    std::vector<int> sys_tokens = {0, 1};

    int grid_cells() const { return grid_side * grid_side; }
    int answer_token(int cls) const { return 6 + cls; }
    // Majority symbol; ties break to the lowest symbol. Total on every grid.
    int label_of(const std::vector<int>& grid) const;
    TokenLayout layout() const;
    void validate(const ModelConfig& cfg) const;
};

struct TriggerSpec {
    enum class Kind { patch, global };
    Kind kind = Kind::patch;
    // patch: rectangle of dedicated trigger symbols
    int patch_row = 0, patch_col = 0, patch_h = 2, patch_w = 2;
    std::vector<int> patch_symbols; // cycled over the region
    // global: injective remap of every content symbol to a "tinted" variant
    std::vector<int> global_remap; // indexed by content symbol
    std::vector<int> target;       // o* (answer_len tokens)

    void validate(const TaskSpec& task, const ModelConfig& cfg) const;
};

struct Sample {
    long long id = 0;
    std::vector<int> grid;
    std::vector<int> prompt;
    std::vector<int> answer;
    bool poisoned = false;

    std::vector<int> input_tokens(const TaskSpec& task) const; // sys + vis + prm
    std::vector<int> full_tokens(const TaskSpec& task) const;  // input + answer
};

struct PoisonConfig {
    int size = 3000;
    double rate = 0.5;
    // poisoned count follows round-half-up
    static int poisoned_count(int size, double rate);
};

std::vector<Sample> gen_clean(const TaskSpec& task, Pcg32& rng, int n, long long id_base = 0);

Sample apply_trigger(const Sample& clean, const TriggerSpec& trigger, const TaskSpec& task);

// Triggered copies that keep the pre-trigger ground-truth answer; evaluation
// sets measure poisoned utility against it, unlike training samples whose
// answer is the attacker's target.
std::vector<Sample> make_triggered_eval_set(const std::vector<Sample>& clean,
                                            const TriggerSpec& trigger, const TaskSpec& task);

// D_c ∪ D_p with the poisoned subset chosen uniformly and the order shuffled.
std::vector<Sample> build_dataset(const TaskSpec& task, const TriggerSpec& trigger,
                                  const PoisonConfig& poison, Pcg32& rng);

void save_dataset_jsonl(const std::vector<Sample>& samples, const std::string& path);
std::vector<Sample> load_dataset_jsonl(const std::string& path);

} // namespace attnguard
