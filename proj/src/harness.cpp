// SPDX-License-Identifier: Apache-2.0
#include "attnguard/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "attnguard/common.hpp"
#include "json.hpp"

namespace attnguard {

using nlohmann::json;

double auroc(const std::vector<double>& positive, const std::vector<double>& negative) {
    if (positive.empty() || negative.empty())
        throw ArgumentError("auroc: both score sets must be nonempty");
    struct Entry {
        double score;
        bool pos;
    };
    std::vector<Entry> all;
    all.reserve(positive.size() + negative.size());
    for (double s : positive) all.push_back({s, true});
    for (double s : negative) all.push_back({s, false});
    std::stable_sort(all.begin(), all.end(),
                     [](const Entry& a, const Entry& b) { return a.score < b.score; });

    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < all.size()) {
        size_t j = i;
        while (j < all.size() && all[j].score == all[i].score) ++j;
        // midrank of the tie group [i, j), ranks are 1-based
        double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (size_t k = i; k < j; ++k)
            if (all[k].pos) rank_sum_pos += midrank;
        i = j;
    }
    double n1 = static_cast<double>(positive.size());
    double n2 = static_cast<double>(negative.size());
    double u = rank_sum_pos - n1 * (n1 + 1.0) / 2.0;
    return u / (n1 * n2);
}

std::pair<double, double> tpr_fpr(const std::vector<double>& scores,
                                  const std::vector<bool>& poisoned, double gamma) {
    if (scores.size() != poisoned.size())
        throw ArgumentError("tpr_fpr: scores and labels differ in length");
    long long pos = 0, neg = 0, tp = 0, fp = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (poisoned[i]) {
            ++pos;
            if (scores[i] > gamma) ++tp;
        } else {
            ++neg;
            if (scores[i] > gamma) ++fp;
        }
    }
    if (pos == 0) throw UndefinedRateError("tpr_fpr: no poisoned samples, TPR undefined");
    if (neg == 0) throw UndefinedRateError("tpr_fpr: no clean samples, FPR undefined");
    return {100.0 * tp / pos, 100.0 * fp / neg};
}

DefenseMode defense_mode_from_string(const std::string& s) {
    if (s == "none") return DefenseMode::none;
    if (s == "cleansight") return DefenseMode::cleansight;
    if (s == "no_detection") return DefenseMode::no_detection;
    if (s == "random_prune") return DefenseMode::random_prune;
    if (s == "interp") return DefenseMode::interp;
    if (s == "noise") return DefenseMode::noise;
    throw ArgumentError("unknown defense mode: " + s);
}

std::string to_string(DefenseMode m) {
    switch (m) {
        case DefenseMode::none: return "none";
        case DefenseMode::cleansight: return "cleansight";
        case DefenseMode::no_detection: return "no_detection";
        case DefenseMode::random_prune: return "random_prune";
        case DefenseMode::interp: return "interp";
        case DefenseMode::noise: return "noise";
    }
    throw ArgumentError("unknown defense mode");
}

namespace {

std::vector<int> decode_answer(const ModelParameters& params, const std::vector<int>& input,
                               const TokenLayout& layout, const ForwardOptions& opts = {}) {
    std::vector<int> seq = decode_greedy(params, input, layout, params.config.answer_len, opts);
    return {seq.begin() + static_cast<long>(input.size()), seq.end()};
}

} // namespace

MetricsReport run_pipeline_eval(const ModelParameters& params, const TaskSpec& task,
                                const std::vector<Sample>& clean_test,
                                const std::vector<Sample>& poisoned_test,
                                const std::vector<int>& target, const ReferenceStats* stats,
                                const DetectionConfig& det, const DefenseSettings& defense,
                                uint64_t seed, const std::string& config_hash) {
    const TokenLayout layout = task.layout();
    const bool needs_stats =
        defense.mode == DefenseMode::cleansight;
    if (needs_stats && !stats)
        throw CalibrationError("run_pipeline_eval: mode requires calibrated reference statistics");

    MetricsReport report;
    report.mode = to_string(defense.mode);
    report.seed = seed;
    report.config_hash = config_hash;

    Pcg32 prune_rng(seed, rng_stream::kRandomPrune);
    Pcg32 noise_rng(seed, rng_stream::kTokenNoise);

    AttnHook interp_hook;
    std::vector<AttnHook> hooks;
    if (defense.mode == DefenseMode::interp) {
        interp_hook = attention_interpolate(defense.lambda);
        hooks.push_back(interp_hook);
    }

    long long clean_hits = 0, poison_hits = 0, asr_hits = 0;
    std::vector<double> scores;
    std::vector<bool> labels;

    auto run_one = [&](const Sample& sample, bool is_poisoned) {
        SampleRecord rec;
        rec.id = sample.id;
        rec.poisoned = is_poisoned;
        rec.reference = sample.answer;

        const Sample* src = &sample;
        Sample noised;
        if (defense.mode == DefenseMode::noise) {
            noised = token_noise(sample, defense.noise_intensity, params.config.visual_vocab,
                                 noise_rng);
            src = &noised;
        }
        std::vector<int> input = src->input_tokens(task);

        if (defense.mode == DefenseMode::cleansight) {
            PurifiedDecode pd =
                purified_decode(params, input, layout, *stats, det, defense.tau, defense.bias);
            rec.output = pd.output;
            rec.flagged = pd.flagged;
            rec.score = pd.score;
            rec.omega_size = static_cast<int>(pd.mask.omega.size());
        } else {
            ForwardOptions opts;
            AttentionBias bias;
            PruneMask mask;
            bool have_probe = false;
            ForwardOutput probe;
            if (stats || defense.mode == DefenseMode::no_detection) {
                probe = forward(params, input, layout);
                have_probe = true;
            }
            if (stats && have_probe) {
                Detection d = detect(probe.trace, layout, *stats, det);
                rec.score = d.score;
                rec.flagged = d.is_poisoned;
            }
            switch (defense.mode) {
                case DefenseMode::no_detection:
                    mask = build_prune_mask(probe.trace, layout, det.end_layer(), defense.tau,
                                            defense.bias);
                    break;
                case DefenseMode::random_prune:
                    mask = random_prune_mask(layout, defense.random_fraction, prune_rng,
                                             defense.bias, det.end_layer() + 1);
                    break;
                default:
                    break;
            }
            if (!mask.omega.empty()) {
                bias = to_attention_bias(mask);
                opts.bias = &bias;
            }
            rec.omega_size = static_cast<int>(mask.omega.size());
            if (!hooks.empty()) opts.hooks = &hooks;
            rec.output = decode_answer(params, input, layout, opts);
        }

        if (stats) {
            scores.push_back(rec.score);
            labels.push_back(is_poisoned);
        }
        if (is_poisoned) {
            if (rec.output == sample.answer) ++poison_hits;
            if (rec.output == target) ++asr_hits;
        } else if (rec.output == sample.answer) {
            ++clean_hits;
        }
        report.records.push_back(std::move(rec));
    };

    for (const Sample& s : clean_test) run_one(s, false);
    for (const Sample& s : poisoned_test) run_one(s, true);

    if (!clean_test.empty())
        report.clean_acc = 100.0 * clean_hits / static_cast<double>(clean_test.size());
    if (!poisoned_test.empty()) {
        report.poisoned_acc = 100.0 * poison_hits / static_cast<double>(poisoned_test.size());
        report.asr = 100.0 * asr_hits / static_cast<double>(poisoned_test.size());
    }
    if (stats && !clean_test.empty() && !poisoned_test.empty()) {
        auto [tpr, fpr] = tpr_fpr(scores, labels, stats->gamma);
        report.tpr = tpr;
        report.fpr = fpr;
        std::vector<double> pos, neg;
        for (size_t i = 0; i < scores.size(); ++i)
            (labels[i] ? pos : neg).push_back(scores[i]);
        report.auroc = auroc(pos, neg);
    }
    return report;
}

SweepAxis sweep_axis_from_string(const std::string& s) {
    if (s == "start_layer") return SweepAxis::start_layer;
    if (s == "num_layers") return SweepAxis::num_layers;
    if (s == "gamma_quantile") return SweepAxis::gamma_quantile;
    if (s == "val_size") return SweepAxis::val_size;
    if (s == "tau") return SweepAxis::tau;
    if (s == "interp_lambda") return SweepAxis::interp_lambda;
    if (s == "noise_intensity") return SweepAxis::noise_intensity;
    if (s == "poison_rate") return SweepAxis::poison_rate;
    throw ArgumentError("unknown sweep axis: " + s);
}

std::string to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::start_layer: return "start_layer";
        case SweepAxis::num_layers: return "num_layers";
        case SweepAxis::gamma_quantile: return "gamma_quantile";
        case SweepAxis::val_size: return "val_size";
        case SweepAxis::tau: return "tau";
        case SweepAxis::interp_lambda: return "interp_lambda";
        case SweepAxis::noise_intensity: return "noise_intensity";
        case SweepAxis::poison_rate: return "poison_rate";
    }
    throw ArgumentError("unknown sweep axis");
}

namespace {

std::vector<RatioFeature> features_of(const ModelParameters& params, const TaskSpec& task,
                                      const std::vector<Sample>& samples,
                                      const DetectionConfig& det) {
    const TokenLayout layout = task.layout();
    std::vector<RatioFeature> out;
    out.reserve(samples.size());
    for (const Sample& s : samples) {
        ForwardOutput probe = forward(params, s.input_tokens(task), layout);
        out.push_back(ratio_features(probe.trace, layout, det));
    }
    return out;
}

// Mean-of-ratios over heads, one dimension per detection layer; whitened on the
// validation set and scored by |z| (l2 over the collapsed dimensions).
double head_average_auroc(const ModelParameters& params, const TaskSpec& task,
                          const std::vector<Sample>& val, const std::vector<Sample>& clean_test,
                          const std::vector<Sample>& poisoned_test, const DetectionConfig& det) {
    int heads = params.config.num_heads;
    auto collapse = [&](const RatioFeature& f) {
        std::vector<double> per_layer(f.values.size() / heads, 0.0);
        for (size_t i = 0; i < f.values.size(); ++i) per_layer[i / heads] += f.values[i] / heads;
        return per_layer;
    };
    std::vector<std::vector<double>> vf;
    for (const RatioFeature& f : features_of(params, task, val, det)) vf.push_back(collapse(f));
    size_t dim = vf.at(0).size();
    std::vector<double> mu(dim, 0.0), sigma(dim, 0.0);
    for (const auto& v : vf)
        for (size_t i = 0; i < dim; ++i) mu[i] += v[i];
    for (double& m : mu) m /= static_cast<double>(vf.size());
    for (const auto& v : vf)
        for (size_t i = 0; i < dim; ++i) {
            double d = v[i] - mu[i];
            sigma[i] += d * d;
        }
    for (double& s : sigma) s = std::max(std::sqrt(s / static_cast<double>(vf.size())), 1e-8);

    auto score_of = [&](const RatioFeature& f) {
        std::vector<double> v = collapse(f);
        double acc = 0.0;
        for (size_t i = 0; i < dim; ++i) {
            double z = (v[i] - mu[i]) / sigma[i];
            acc += z * z;
        }
        return std::sqrt(acc);
    };
    std::vector<double> pos, neg;
    for (const RatioFeature& f : features_of(params, task, poisoned_test, det))
        pos.push_back(score_of(f));
    for (const RatioFeature& f : features_of(params, task, clean_test, det))
        neg.push_back(score_of(f));
    return auroc(pos, neg);
}

// Fig. 6 protocol: isolate the pruning threshold by pruning exactly the
// poisoned inputs (oracle detection) and leaving clean inputs untouched.
MetricsReport tau_oracle_eval(const SweepContext& ctx, double tau) {
    const TokenLayout layout = ctx.task.layout();
    const ModelParameters& params = *ctx.params;
    MetricsReport report;
    report.mode = "tau_oracle";
    report.seed = ctx.seed;
    report.config_hash = ctx.config_hash;

    long long clean_hits = 0, poison_hits = 0, asr_hits = 0;
    for (const Sample& s : ctx.test_clean) {
        SampleRecord rec;
        rec.id = s.id;
        rec.reference = s.answer;
        rec.output = decode_answer(params, s.input_tokens(ctx.task), layout);
        if (rec.output == s.answer) ++clean_hits;
        report.records.push_back(std::move(rec));
    }
    for (const Sample& s : ctx.test_poisoned) {
        SampleRecord rec;
        rec.id = s.id;
        rec.poisoned = true;
        rec.flagged = true;
        rec.reference = s.answer;
        std::vector<int> input = s.input_tokens(ctx.task);
        ForwardOutput probe = forward(params, input, layout);
        PruneMask mask =
            build_prune_mask(probe.trace, layout, ctx.det.end_layer(), tau, ctx.defense.bias);
        rec.omega_size = static_cast<int>(mask.omega.size());
        ForwardOptions opts;
        AttentionBias bias = to_attention_bias(mask);
        if (!mask.omega.empty()) opts.bias = &bias;
        rec.output = decode_answer(params, input, layout, opts);
        if (rec.output == s.answer) ++poison_hits;
        if (rec.output == ctx.trigger.target) ++asr_hits;
        report.records.push_back(std::move(rec));
    }
    if (!ctx.test_clean.empty())
        report.clean_acc = 100.0 * clean_hits / static_cast<double>(ctx.test_clean.size());
    if (!ctx.test_poisoned.empty()) {
        report.poisoned_acc = 100.0 * poison_hits / static_cast<double>(ctx.test_poisoned.size());
        report.asr = 100.0 * asr_hits / static_cast<double>(ctx.test_poisoned.size());
    }
    return report;
}

} // namespace

ReferenceStats calibrate_on_samples(const ModelParameters& params, const TaskSpec& task,
                                    const std::vector<Sample>& val, const DetectionConfig& det) {
    return calibrate(features_of(params, task, val, det), det, params.config.num_heads);
}

std::vector<SweepRow> sweep(const SweepContext& ctx, const SweepSpec& spec) {
    if (spec.grid.empty()) throw ArgumentError("sweep: empty grid");
    if (!ctx.params) throw ArgumentError("sweep: missing checkpoint");
    std::vector<SweepRow> rows;
    rows.reserve(spec.grid.size());

    for (double v : spec.grid) {
        SweepRow row;
        row.value = v;
        DetectionConfig det = ctx.det;
        DefenseSettings defense = ctx.defense;
        switch (spec.axis) {
            case SweepAxis::start_layer:
            case SweepAxis::num_layers: {
                if (spec.axis == SweepAxis::start_layer)
                    det.start_layer = static_cast<int>(v);
                else
                    det.num_layers = static_cast<int>(v);
                det.validate(ctx.params->config.num_layers);
                ReferenceStats stats = calibrate_on_samples(*ctx.params, ctx.task, ctx.val_clean, det);
                row.metrics =
                    run_pipeline_eval(*ctx.params, ctx.task, ctx.test_clean, ctx.test_poisoned,
                                      ctx.trigger.target, &stats, det, defense, ctx.seed,
                                      ctx.config_hash);
                row.head_avg_auroc = head_average_auroc(*ctx.params, ctx.task, ctx.val_clean,
                                                        ctx.test_clean, ctx.test_poisoned, det);
                break;
            }
            case SweepAxis::gamma_quantile: {
                det.quantile = v;
                det.validate(ctx.params->config.num_layers);
                ReferenceStats stats = calibrate_on_samples(*ctx.params, ctx.task, ctx.val_clean, det);
                row.metrics =
                    run_pipeline_eval(*ctx.params, ctx.task, ctx.test_clean, ctx.test_poisoned,
                                      ctx.trigger.target, &stats, det, defense, ctx.seed,
                                      ctx.config_hash);
                break;
            }
            case SweepAxis::val_size: {
                size_t n = static_cast<size_t>(v);
                if (n < 2 || n > ctx.val_clean.size())
                    throw ArgumentError("sweep: val_size outside the calibration pool");
                std::vector<Sample> subset(ctx.val_clean.begin(),
                                           ctx.val_clean.begin() + static_cast<long>(n));
                ReferenceStats stats = calibrate_on_samples(*ctx.params, ctx.task, subset, det);
                row.metrics =
                    run_pipeline_eval(*ctx.params, ctx.task, ctx.test_clean, ctx.test_poisoned,
                                      ctx.trigger.target, &stats, det, defense, ctx.seed,
                                      ctx.config_hash);
                break;
            }
            case SweepAxis::tau:
                row.metrics = tau_oracle_eval(ctx, v);
                break;
            case SweepAxis::interp_lambda:
            case SweepAxis::noise_intensity: {
                defense.mode = spec.axis == SweepAxis::interp_lambda ? DefenseMode::interp
                                                                     : DefenseMode::noise;
                if (spec.axis == SweepAxis::interp_lambda)
                    defense.lambda = v;
                else
                    defense.noise_intensity = v;
                ReferenceStats stats = calibrate_on_samples(*ctx.params, ctx.task, ctx.val_clean, det);
                row.metrics =
                    run_pipeline_eval(*ctx.params, ctx.task, ctx.test_clean, ctx.test_poisoned,
                                      ctx.trigger.target, &stats, det, defense, ctx.seed,
                                      ctx.config_hash);
                break;
            }
            case SweepAxis::poison_rate: {
                if (!ctx.init) throw ArgumentError("sweep: poison_rate axis needs initial weights");
                if (v < 0.0 || v > 1.0) throw ArgumentError("sweep: poison_rate outside [0, 1]");
                PoisonConfig poison;
                poison.rate = v;
                TrainResult tr =
                    train_pipeline(*ctx.init, ctx.task, ctx.trigger, poison, ctx.train_cfg, ctx.seed);
                ReferenceStats stats = calibrate_on_samples(tr.params, ctx.task, ctx.val_clean, det);
                row.metrics =
                    run_pipeline_eval(tr.params, ctx.task, ctx.test_clean, ctx.test_poisoned,
                                      ctx.trigger.target, &stats, det, defense, ctx.seed,
                                      ctx.config_hash);
                break;
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<double> knockout_curve(const ModelParameters& params, const TaskSpec& task,
                                   const std::vector<Sample>& samples, EdgeClass edge) {
    if (samples.empty()) throw ArgumentError("knockout_curve: empty sample set");
    const TokenLayout layout = task.layout();
    std::vector<double> acc;
    acc.reserve(static_cast<size_t>(params.config.num_layers));
    for (int l = 1; l <= params.config.num_layers; ++l) {
        ForwardOptions opts;
        opts.knockout = Knockout{l, edge};
        long long hits = 0;
        for (const Sample& s : samples)
            if (decode_answer(params, s.input_tokens(task), layout, opts) == s.answer) ++hits;
        acc.push_back(100.0 * hits / static_cast<double>(samples.size()));
    }
    return acc;
}

FusionOnset locate_fusion_onset(const ModelParameters& params, const TaskSpec& task,
                                const std::vector<Sample>& samples, double delta) {
    FusionOnset result;
    result.baseline_acc = eval_acc(params, task, samples);
    std::vector<double> acc = knockout_curve(params, task, samples, EdgeClass::vis_to_text);
    result.drops.reserve(acc.size());
    for (double a : acc) result.drops.push_back(result.baseline_acc - a);
    for (size_t l = 0; l < result.drops.size(); ++l)
        if (result.drops[l] > delta) {
            result.onset_layer = static_cast<int>(l) + 1;
            return result;
        }
    throw OnsetNotFoundError("locate_fusion_onset: no layer's knockout drops accuracy by more than " +
                             std::to_string(delta) + " points");
}

LensReport logit_lens_report(const ModelParameters& params, const TaskSpec& task,
                             const std::vector<Sample>& clean,
                             const std::vector<Sample>& poisoned, const std::vector<int>& target,
                             const DetectionConfig& det, double tau, double bias) {
    if (clean.empty() || poisoned.empty())
        throw ArgumentError("logit_lens_report: both sample sets must be nonempty");
    if (target.empty()) throw ArgumentError("logit_lens_report: empty target");
    const TokenLayout layout = task.layout();
    const int L = params.config.num_layers;

    auto accumulate = [&](LensCurves& curves, const Sample& s, const ForwardOptions& base_opts) {
        ForwardOptions opts = base_opts;
        opts.capture_hidden = true;
        ForwardOutput out = forward(params, s.input_tokens(task), layout, opts);
        std::vector<std::vector<double>> probs =
            logit_lens(params, out, {s.answer.at(0), target.at(0)});
        if (curves.correct.empty()) {
            curves.correct.assign(static_cast<size_t>(L), 0.0);
            curves.target.assign(static_cast<size_t>(L), 0.0);
        }
        for (int l = 0; l < L; ++l) {
            curves.correct[static_cast<size_t>(l)] += probs[static_cast<size_t>(l)][0];
            curves.target[static_cast<size_t>(l)] += probs[static_cast<size_t>(l)][1];
        }
    };
    auto finish = [L](LensCurves& curves, size_t n) {
        for (int l = 0; l < L; ++l) {
            curves.correct[static_cast<size_t>(l)] /= static_cast<double>(n);
            curves.target[static_cast<size_t>(l)] /= static_cast<double>(n);
        }
    };

    LensReport report;
    for (const Sample& s : clean) accumulate(report.clean, s, {});
    finish(report.clean, clean.size());
    for (const Sample& s : poisoned) accumulate(report.poisoned_undefended, s, {});
    finish(report.poisoned_undefended, poisoned.size());
    for (const Sample& s : poisoned) {
        ForwardOutput probe = forward(params, s.input_tokens(task), layout);
        PruneMask mask = build_prune_mask(probe.trace, layout, det.end_layer(), tau, bias);
        AttentionBias ab = to_attention_bias(mask);
        ForwardOptions opts;
        if (!mask.omega.empty()) opts.bias = &ab;
        accumulate(report.poisoned_defended, s, opts);
    }
    finish(report.poisoned_defended, poisoned.size());
    return report;
}

namespace {

json record_to_json(const SampleRecord& r) {
    return json{{"id", r.id},         {"poisoned", r.poisoned},
                {"score", r.score},   {"flagged", r.flagged},
                {"omega_size", r.omega_size}, {"output", r.output},
                {"reference", r.reference}};
}

std::string join_tokens(const std::vector<int>& v) {
    std::ostringstream os;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) os << ' ';
        os << v[i];
    }
    return os.str();
}

} // namespace

void emit_report(const MetricsReport& report, const std::string& path, const std::string& format) {
    if (format == "json") {
        json j;
        j["report_version"] = 1;
        j["tool_version"] = std::string(kToolVersion);
        j["config_hash"] = report.config_hash;
        j["seed"] = report.seed;
        j["mode"] = report.mode;
        json m;
        m["asr"] = report.asr;
        m["clean_accuracy"] = report.clean_acc;
        m["poisoned_accuracy"] = report.poisoned_acc;
        m["tpr"] = report.tpr ? json(*report.tpr) : json(nullptr);
        m["fpr"] = report.fpr ? json(*report.fpr) : json(nullptr);
        m["auroc"] = report.auroc ? json(*report.auroc) : json(nullptr);
        j["metrics"] = std::move(m);
        json samples = json::array();
        for (const SampleRecord& r : report.records) samples.push_back(record_to_json(r));
        j["samples"] = std::move(samples);
        std::ofstream f(path);
        if (!f) throw IoError("emit_report: cannot open " + path);
        f << j.dump(2) << "\n";
    } else if (format == "csv") {
        std::ofstream f(path);
        if (!f) throw IoError("emit_report: cannot open " + path);
        f << "id,poisoned,score,flagged,omega_size,output,reference,config_hash,tool_version\n";
        for (const SampleRecord& r : report.records) {
            f << r.id << ',' << (r.poisoned ? 1 : 0) << ',' << json(r.score).dump() << ','
              << (r.flagged ? 1 : 0) << ',' << r.omega_size << ',' << join_tokens(r.output) << ','
              << join_tokens(r.reference) << ',' << report.config_hash << ',' << kToolVersion
              << "\n";
        }
    } else {
        throw ArgumentError("emit_report: format must be json or csv");
    }
}

MetricsReport load_report_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("load_report_json: cannot open " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw FormatError(std::string("load_report_json: ") + e.what());
    }
    if (j.value("report_version", -1) != 1)
        throw FormatError("load_report_json: unsupported report version");
    MetricsReport r;
    r.config_hash = j.value("config_hash", "");
    r.seed = j.at("seed").get<uint64_t>();
    r.mode = j.at("mode").get<std::string>();
    const json& m = j.at("metrics");
    r.asr = m.at("asr").get<double>();
    r.clean_acc = m.at("clean_accuracy").get<double>();
    r.poisoned_acc = m.at("poisoned_accuracy").get<double>();
    if (!m.at("tpr").is_null()) r.tpr = m.at("tpr").get<double>();
    if (!m.at("fpr").is_null()) r.fpr = m.at("fpr").get<double>();
    if (!m.at("auroc").is_null()) r.auroc = m.at("auroc").get<double>();
    for (const json& s : j.at("samples")) {
        SampleRecord rec;
        rec.id = s.at("id").get<long long>();
        rec.poisoned = s.at("poisoned").get<bool>();
        rec.score = s.at("score").get<double>();
        rec.flagged = s.at("flagged").get<bool>();
        rec.omega_size = s.at("omega_size").get<int>();
        rec.output = s.at("output").get<std::vector<int>>();
        rec.reference = s.at("reference").get<std::vector<int>>();
        r.records.push_back(std::move(rec));
    }
    return r;
}

} // namespace attnguard
