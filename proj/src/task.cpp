// SPDX-License-Identifier: Apache-2.0
#include "attnguard/task.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "attnguard/common.hpp"
#include "json.hpp"

namespace attnguard {

using nlohmann::json;

int TaskSpec::label_of(const std::vector<int>& grid) const {
    std::vector<int> counts(symbol_count, 0);
    for (int g : grid)
        if (g >= 0 && g < symbol_count) ++counts[g];
    int best = 0;
    for (int c = 1; c < symbol_count; ++c)
        if (counts[c] > counts[best]) best = c;
    return best;
}

TokenLayout TaskSpec::layout() const {
    TokenLayout l;
    l.sys_len = static_cast<int>(sys_tokens.size());
    l.vis_len = grid_cells();
    l.prm_len = static_cast<int>(prompt_tokens.size());
    return l;
}

void TaskSpec::validate(const ModelConfig& cfg) const {
    if (grid_side < 1) throw ConfigError("task: grid_side must be positive");
    if (symbol_count < 2) throw ConfigError("task: at least two symbols required");
    if (answer_classes != symbol_count)
        throw ConfigError("task: answer_classes must equal symbol_count for the majority task");
    if (prompt_tokens.empty()) throw ConfigError("task: prompt must be nonempty");
    if (answer_len != cfg.answer_len)
        throw ConfigError("task: answer_len must match the model's answer_len");
    if (symbol_count > cfg.visual_vocab)
        throw ConfigError("task: symbol_count exceeds visual vocabulary");
    if (symbol_count > cfg.content_vocab)
        throw ConfigError("task: content symbols must lie inside the model's content range");
    if (answer_token(answer_classes - 1) >= cfg.text_vocab)
        throw ConfigError("task: answer tokens exceed text vocabulary");
    for (int t : prompt_tokens)
        if (t < 0 || t >= cfg.text_vocab) throw ConfigError("task: prompt token out of vocabulary");
    for (int t : sys_tokens)
        if (t < 0 || t >= cfg.text_vocab) throw ConfigError("task: system token out of vocabulary");
    if (layout().prm_end() + cfg.answer_len > cfg.max_seq)
        throw ConfigError("task: layout plus answer exceeds max_seq");
}

void TriggerSpec::validate(const TaskSpec& task, const ModelConfig& cfg) const {
    if (target.empty() || static_cast<int>(target.size()) != cfg.answer_len)
        throw ConfigError("trigger: target length must equal answer_len");
    for (int t : target)
        if (t < 0 || t >= cfg.text_vocab) throw ConfigError("trigger: target token out of vocabulary");
    if (kind == Kind::patch) {
        if (patch_h < 1 || patch_w < 1 || patch_row < 0 || patch_col < 0 ||
            patch_row + patch_h > task.grid_side || patch_col + patch_w > task.grid_side)
            throw ConfigError("trigger: patch region lies outside the grid");
        if (patch_symbols.empty()) throw ConfigError("trigger: patch symbols required");
        for (int s : patch_symbols)
            if (s < 0 || s >= cfg.visual_vocab) throw ConfigError("trigger: patch symbol out of vocabulary");
    } else {
        if (static_cast<int>(global_remap.size()) != task.symbol_count)
            throw ConfigError("trigger: global remap must cover every content symbol");
        std::set<int> seen;
        for (int s : global_remap) {
            if (s < 0 || s >= cfg.visual_vocab) throw ConfigError("trigger: remap symbol out of vocabulary");
            if (!seen.insert(s).second) throw ConfigError("trigger: global remap must be injective");
        }
    }
}

std::vector<int> Sample::input_tokens(const TaskSpec& task) const {
    std::vector<int> toks = task.sys_tokens;
    toks.insert(toks.end(), grid.begin(), grid.end());
    toks.insert(toks.end(), prompt.begin(), prompt.end());
    return toks;
}

std::vector<int> Sample::full_tokens(const TaskSpec& task) const {
    std::vector<int> toks = input_tokens(task);
    toks.insert(toks.end(), answer.begin(), answer.end());
    return toks;
}

int PoisonConfig::poisoned_count(int size, double rate) {
    return static_cast<int>(std::floor(rate * size + 0.5));
}

std::vector<Sample> gen_clean(const TaskSpec& task, Pcg32& rng, int n, long long id_base) {
    if (n < 1) throw ArgumentError("gen_clean: n must be at least 1");
    int cells = task.grid_cells();
    // dominant symbol gets a clear majority so boundary grids stay rare
    int lo = cells / 2 + 1;
    int hi = std::min(cells, lo + cells / 4);
    std::vector<Sample> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        Sample s;
        s.id = id_base + i;
        int dominant = static_cast<int>(rng.next_below(static_cast<uint32_t>(task.symbol_count)));
        int m = lo + static_cast<int>(rng.next_below(static_cast<uint32_t>(hi - lo + 1)));
        s.grid.assign(cells, dominant);
        for (int c = m; c < cells; ++c) {
            int other = static_cast<int>(rng.next_below(static_cast<uint32_t>(task.symbol_count - 1)));
            if (other >= dominant) ++other;
            s.grid[c] = other;
        }
        rng.shuffle(s.grid);
        s.prompt = task.prompt_tokens;
        s.answer.assign(task.answer_len, task.answer_token(task.label_of(s.grid)));
        s.poisoned = false;
        out.push_back(std::move(s));
    }
    return out;
}

Sample apply_trigger(const Sample& clean, const TriggerSpec& trigger, const TaskSpec& task) {
    Sample s = clean;
    if (trigger.kind == TriggerSpec::Kind::patch) {
        int side = task.grid_side;
        if (trigger.patch_row + trigger.patch_h > side || trigger.patch_col + trigger.patch_w > side)
            throw ConfigError("apply_trigger: patch region lies outside the grid");
        int n = 0;
        for (int r = trigger.patch_row; r < trigger.patch_row + trigger.patch_h; ++r)
            for (int c = trigger.patch_col; c < trigger.patch_col + trigger.patch_w; ++c)
                s.grid[r * side + c] = trigger.patch_symbols[n++ % trigger.patch_symbols.size()];
    } else {
        for (int& g : s.grid) g = trigger.global_remap.at(g);
    }
    s.answer = trigger.target;
    s.poisoned = true;
    return s;
}

std::vector<Sample> make_triggered_eval_set(const std::vector<Sample>& clean,
                                            const TriggerSpec& trigger, const TaskSpec& task) {
    std::vector<Sample> out;
    out.reserve(clean.size());
    for (const Sample& s : clean) {
        Sample t = apply_trigger(s, trigger, task);
        t.answer = s.answer;
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<Sample> build_dataset(const TaskSpec& task, const TriggerSpec& trigger,
                                  const PoisonConfig& poison, Pcg32& rng) {
    std::vector<Sample> samples = gen_clean(task, rng, poison.size);
    int n_poison = PoisonConfig::poisoned_count(poison.size, poison.rate);
    std::vector<int> order(poison.size);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    for (int i = 0; i < n_poison; ++i)
        samples[order[i]] = apply_trigger(samples[order[i]], trigger, task);
    rng.shuffle(samples);
    return samples;
}

void save_dataset_jsonl(const std::vector<Sample>& samples, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("save_dataset_jsonl: cannot open " + path);
    for (const Sample& s : samples) {
        json j{{"id", s.id}, {"grid", s.grid}, {"prompt", s.prompt},
               {"answer", s.answer}, {"poisoned", s.poisoned}};
        f << j.dump() << "\n";
    }
}

std::vector<Sample> load_dataset_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("load_dataset_jsonl: cannot open " + path);
    std::vector<Sample> out;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("dataset line " + std::to_string(lineno) + ": " + e.what());
        }
        Sample s;
        s.id = j.at("id").get<long long>();
        s.grid = j.at("grid").get<std::vector<int>>();
        s.prompt = j.at("prompt").get<std::vector<int>>();
        s.answer = j.at("answer").get<std::vector<int>>();
        s.poisoned = j.at("poisoned").get<bool>();
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace attnguard
