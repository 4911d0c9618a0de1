// SPDX-License-Identifier: Apache-2.0
#include "attnguard/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "attnguard/common.hpp"
#include "json.hpp"

namespace attnguard {

using nlohmann::json;

namespace {

// SAX pass that only checks object keys for duplicates; the DOM is built by a
// separate ordinary parse.
class DuplicateKeyCheck : public json::json_sax_t {
public:
    bool null() override { return true; }
    bool boolean(bool) override { return true; }
    bool number_integer(number_integer_t) override { return true; }
    bool number_unsigned(number_unsigned_t) override { return true; }
    bool number_float(number_float_t, const string_t&) override { return true; }
    bool string(string_t&) override { return true; }
    bool binary(binary_t&) override { return true; }
    bool start_object(std::size_t) override {
        objects_.emplace_back();
        path_.push_back("");
        return true;
    }
    bool key(string_t& k) override {
        if (!objects_.back().insert(k).second)
            throw ConfigError("config: duplicate key \"" + join_path() + k + "\"");
        path_.back() = k;
        return true;
    }
    bool end_object() override {
        objects_.pop_back();
        path_.pop_back();
        return true;
    }
    bool start_array(std::size_t) override { return true; }
    bool end_array() override { return true; }
    bool parse_error(std::size_t, const std::string&, const nlohmann::detail::exception& ex) override {
        throw ConfigError(std::string("config: ") + ex.what());
    }

private:
    std::string join_path() const {
        std::string p;
        for (size_t i = 0; i + 1 < path_.size(); ++i) p += path_[i] + ".";
        return p;
    }
    std::vector<std::set<std::string>> objects_;
    std::vector<std::string> path_;
};

// Tracks which keys of an object were consumed; leftovers are config errors
// naming the full key path.
class ObjReader {
public:
    ObjReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config: " + path_ + " must be an object");
    }

    const json* find(const std::string& k) {
        seen_.insert(k);
        auto it = j_.find(k);
        return it == j_.end() ? nullptr : &*it;
    }

    template <typename T>
    void get(const std::string& k, T& out) {
        if (const json* v = find(k)) {
            try {
                out = v->get<T>();
            } catch (const json::exception&) {
                throw ConfigError("config: wrong type for key \"" + key_path(k) + "\"");
            }
        }
    }

    std::string key_path(const std::string& k) const {
        return path_.empty() ? k : path_ + "." + k;
    }

    void finish() {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key()))
                throw ConfigError("config: unknown key \"" + key_path(it.key()) + "\"");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_model(const json& j, ModelConfig& m) {
    ObjReader r(j, "model");
    r.get("num_layers", m.num_layers);
    r.get("num_heads", m.num_heads);
    r.get("model_dim", m.model_dim);
    r.get("visual_vocab", m.visual_vocab);
    r.get("content_vocab", m.content_vocab);
    r.get("text_vocab", m.text_vocab);
    r.get("max_seq", m.max_seq);
    r.get("answer_len", m.answer_len);
    r.finish();
}

void read_task(const json& j, TaskSpec& t) {
    ObjReader r(j, "task");
    r.get("grid_side", t.grid_side);
    r.get("symbol_count", t.symbol_count);
    r.get("answer_classes", t.answer_classes);
    r.get("answer_len", t.answer_len);
    r.get("prompt_tokens", t.prompt_tokens);
    r.get("sys_tokens", t.sys_tokens);
    r.finish();
}

void read_trigger(const json& j, TriggerSpec& t) {
    ObjReader r(j, "trigger");
    if (const json* k = r.find("kind")) {
        std::string s = k->get<std::string>();
        if (s == "patch")
            t.kind = TriggerSpec::Kind::patch;
        else if (s == "global")
            t.kind = TriggerSpec::Kind::global;
        else
            throw ConfigError("config: trigger.kind must be \"patch\" or \"global\"");
    }
    r.get("patch_row", t.patch_row);
    r.get("patch_col", t.patch_col);
    r.get("patch_h", t.patch_h);
    r.get("patch_w", t.patch_w);
    r.get("patch_symbols", t.patch_symbols);
    r.get("global_remap", t.global_remap);
    r.get("target", t.target);
    r.finish();
}

void read_regularizers(const json& j, std::vector<RegularizerSpec>& regs) {
    if (!j.is_array()) throw ConfigError("config: train.regularizers must be an array");
    regs.clear();
    for (size_t i = 0; i < j.size(); ++i) {
        ObjReader r(j[i], "train.regularizers[" + std::to_string(i) + "]");
        RegularizerSpec spec;
        if (const json* k = r.find("kind"))
            spec.kind = reg_kind_from_string(k->get<std::string>());
        else
            throw ConfigError("config: train.regularizers entries need a kind");
        r.get("weight", spec.weight);
        r.get("ratio_cap", spec.ratio_cap);
        r.finish();
        regs.push_back(spec);
    }
}

void read_train(const json& j, TrainConfig& t) {
    ObjReader r(j, "train");
    r.get("batch_size", t.batch_size);
    r.get("epochs", t.epochs);
    r.get("pretrain_epochs", t.pretrain_epochs);
    r.get("pretrain_lr", t.pretrain_lr);
    r.get("freeze", t.freeze);
    r.get("tune", t.tune);
    r.get("lr", t.lr);
    r.get("beta1", t.beta1);
    r.get("beta2", t.beta2);
    r.get("eps", t.eps);
    if (const json* v = r.find("regularizers")) read_regularizers(*v, t.regularizers);
    r.finish();
}

void read_detection(const json& j, DetectionConfig& d, const std::string& path) {
    ObjReader r(j, path);
    r.get("start_layer", d.start_layer);
    r.get("num_layers", d.num_layers);
    r.get("quantile", d.quantile);
    r.get("sigma_floor", d.sigma_floor);
    r.get("ratio_floor", d.ratio_floor);
    r.finish();
}

void read_harness(const json& j, HarnessParams& h) {
    ObjReader r(j, "harness");
    r.get("test_clean", h.test_clean);
    r.get("test_poisoned", h.test_poisoned);
    r.get("val_size", h.val_size);
    r.get("fusion_delta", h.fusion_delta);
    if (const json* d = r.find("defense")) {
        ObjReader rd(*d, "harness.defense");
        if (const json* m = rd.find("mode"))
            h.defense.mode = defense_mode_from_string(m->get<std::string>());
        rd.get("random_fraction", h.defense.random_fraction);
        rd.get("lambda", h.defense.lambda);
        rd.get("noise_intensity", h.defense.noise_intensity);
        rd.finish();
    }
    if (const json* s = r.find("sweep")) {
        ObjReader rs(*s, "harness.sweep");
        if (const json* a = rs.find("axis"))
            h.sweep.axis = sweep_axis_from_string(a->get<std::string>());
        rs.get("grid", h.sweep.grid);
        rs.finish();
    }
    r.finish();
}

void apply_trigger_defaults(RunConfig& cfg) {
    TriggerSpec& t = cfg.trigger;
    if (t.patch_symbols.empty()) {
        // dedicated trigger symbols just past the content range
        t.patch_symbols = {cfg.task.symbol_count * 2, cfg.task.symbol_count * 2 + 1};
    }
    if (t.global_remap.empty()) {
        for (int s = 0; s < cfg.task.symbol_count; ++s)
            t.global_remap.push_back(cfg.task.symbol_count + s);
    }
    if (t.target.empty()) {
        // dedicated target tokens just past the answer-class range
        for (int i = 0; i < cfg.model.answer_len; ++i)
            t.target.push_back(cfg.task.answer_token(cfg.task.answer_classes) + i);
    }
}

} // namespace

void RunConfig::validate() const {
    if (prng != "pcg32") throw ConfigError("config: prng must be \"pcg32\"");
    model.validate();
    task.validate(model);
    trigger.validate(task, model);
    detection.validate(model.num_layers);
    if (poison.size < 1) throw ConfigError("config: poison.size must be at least 1");
    if (poison.rate < 0.0 || poison.rate > 1.0)
        throw ConfigError("config: poison.rate must lie in [0, 1]");
    if (train.batch_size < 1 || train.epochs < 1)
        throw ConfigError("config: train.batch_size and train.epochs must be at least 1");
    if (train.pretrain_epochs < 0)
        throw ConfigError("config: train.pretrain_epochs must be nonnegative");
    if (train.lr <= 0.0) throw ConfigError("config: train.lr must be positive");
    if (purifier.tau < 0.0) throw ConfigError("config: purifier.tau must be nonnegative");
    if (harness.test_clean < 1 || harness.test_poisoned < 1 || harness.val_size < 2)
        throw ConfigError("config: harness sample counts too small");
    if (harness.defense.random_fraction < 0.0 || harness.defense.random_fraction > 1.0)
        throw ConfigError("config: harness.defense.random_fraction must lie in [0, 1]");
    if (harness.defense.lambda < 0.0 || harness.defense.lambda > 1.0)
        throw ConfigError("config: harness.defense.lambda must lie in [0, 1]");
    if (harness.defense.noise_intensity < 0.0 || harness.defense.noise_intensity > 1.0)
        throw ConfigError("config: harness.defense.noise_intensity must lie in [0, 1]");
    if (harness.fusion_delta <= 0.0) throw ConfigError("config: harness.fusion_delta must be positive");
}

RunConfig parse_config(const std::string& json_text) {
    DuplicateKeyCheck dup;
    json::sax_parse(json_text, &dup);
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }

    RunConfig cfg;
    ObjReader r(j, "");
    r.get("seed", cfg.seed);
    r.get("prng", cfg.prng);
    if (const json* v = r.find("model")) read_model(*v, cfg.model);
    if (const json* v = r.find("task")) read_task(*v, cfg.task);
    // keep the model and task answer lengths in lockstep unless both are given
    if (j.contains("model") && j["model"].contains("answer_len") &&
        !(j.contains("task") && j["task"].contains("answer_len")))
        cfg.task.answer_len = cfg.model.answer_len;
    if (const json* v = r.find("trigger")) read_trigger(*v, cfg.trigger);
    if (const json* v = r.find("poison")) {
        ObjReader rp(*v, "poison");
        rp.get("size", cfg.poison.size);
        rp.get("rate", cfg.poison.rate);
        rp.finish();
    }
    if (const json* v = r.find("train")) read_train(*v, cfg.train);
    if (const json* v = r.find("detection")) read_detection(*v, cfg.detection, "detection");
    if (const json* v = r.find("purifier")) {
        ObjReader rp(*v, "purifier");
        rp.get("tau", cfg.purifier.tau);
        rp.get("bias", cfg.purifier.bias);
        rp.finish();
    }
    if (const json* v = r.find("harness")) read_harness(*v, cfg.harness);
    r.finish();

    apply_trigger_defaults(cfg);
    cfg.train.detection = cfg.detection;
    cfg.harness.defense.tau = cfg.purifier.tau;
    cfg.harness.defense.bias = cfg.purifier.bias;
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("load_config: cannot open " + path);
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_config(buf.str());
}

std::string effective_config_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["prng"] = cfg.prng;
    j["model"] = {{"num_layers", cfg.model.num_layers}, {"num_heads", cfg.model.num_heads},
                  {"model_dim", cfg.model.model_dim},   {"visual_vocab", cfg.model.visual_vocab},
                  {"content_vocab", cfg.model.content_vocab},
                  {"text_vocab", cfg.model.text_vocab}, {"max_seq", cfg.model.max_seq},
                  {"answer_len", cfg.model.answer_len}};
    j["task"] = {{"grid_side", cfg.task.grid_side},
                 {"symbol_count", cfg.task.symbol_count},
                 {"answer_classes", cfg.task.answer_classes},
                 {"answer_len", cfg.task.answer_len},
                 {"prompt_tokens", cfg.task.prompt_tokens},
                 {"sys_tokens", cfg.task.sys_tokens}};
    j["trigger"] = {{"kind", cfg.trigger.kind == TriggerSpec::Kind::patch ? "patch" : "global"},
                    {"patch_row", cfg.trigger.patch_row},
                    {"patch_col", cfg.trigger.patch_col},
                    {"patch_h", cfg.trigger.patch_h},
                    {"patch_w", cfg.trigger.patch_w},
                    {"patch_symbols", cfg.trigger.patch_symbols},
                    {"global_remap", cfg.trigger.global_remap},
                    {"target", cfg.trigger.target}};
    j["poison"] = {{"size", cfg.poison.size}, {"rate", cfg.poison.rate}};
    json regs = json::array();
    for (const RegularizerSpec& r : cfg.train.regularizers)
        regs.push_back({{"kind", to_string(r.kind)}, {"weight", r.weight}, {"ratio_cap", r.ratio_cap}});
    j["train"] = {{"batch_size", cfg.train.batch_size},
                  {"epochs", cfg.train.epochs},
                  {"pretrain_epochs", cfg.train.pretrain_epochs},
                  {"pretrain_lr", cfg.train.pretrain_lr},
                  {"freeze", cfg.train.freeze},
                  {"tune", cfg.train.tune},
                  {"lr", cfg.train.lr},
                  {"beta1", cfg.train.beta1},
                  {"beta2", cfg.train.beta2},
                  {"eps", cfg.train.eps},
                  {"regularizers", std::move(regs)}};
    j["detection"] = {{"start_layer", cfg.detection.start_layer},
                      {"num_layers", cfg.detection.num_layers},
                      {"quantile", cfg.detection.quantile},
                      {"sigma_floor", cfg.detection.sigma_floor},
                      {"ratio_floor", cfg.detection.ratio_floor}};
    j["purifier"] = {{"tau", cfg.purifier.tau}, {"bias", cfg.purifier.bias}};
    j["harness"] = {{"test_clean", cfg.harness.test_clean},
                    {"test_poisoned", cfg.harness.test_poisoned},
                    {"val_size", cfg.harness.val_size},
                    {"fusion_delta", cfg.harness.fusion_delta},
                    {"defense",
                     {{"mode", to_string(cfg.harness.defense.mode)},
                      {"random_fraction", cfg.harness.defense.random_fraction},
                      {"lambda", cfg.harness.defense.lambda},
                      {"noise_intensity", cfg.harness.defense.noise_intensity}}},
                    {"sweep",
                     {{"axis", to_string(cfg.harness.sweep.axis)},
                      {"grid", cfg.harness.sweep.grid}}}};
    return j.dump();
}

EvalSets make_eval_sets(const RunConfig& cfg) {
    EvalSets sets;
    Pcg32 val_rng(cfg.seed, rng_stream::kValData);
    sets.val = gen_clean(cfg.task, val_rng, cfg.harness.val_size, 10'000'000);
    Pcg32 clean_rng(cfg.seed, rng_stream::kTestClean);
    sets.clean = gen_clean(cfg.task, clean_rng, cfg.harness.test_clean, 20'000'000);
    Pcg32 poison_rng(cfg.seed, rng_stream::kTestPoison);
    std::vector<Sample> base = gen_clean(cfg.task, poison_rng, cfg.harness.test_poisoned, 30'000'000);
    sets.poisoned = make_triggered_eval_set(base, cfg.trigger, cfg.task);
    return sets;
}

std::string config_hash(const RunConfig& cfg) {
    uint64_t h = fnv1a64(effective_config_json(cfg));
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

} // namespace attnguard
