// SPDX-License-Identifier: Apache-2.0
#include "attnguard/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "attnguard/common.hpp"
#include "attnguard/config.hpp"
#include "attnguard/harness.hpp"
#include "attnguard/optim.hpp"
#include "attnguard/trace_io.hpp"
#include "json.hpp"

namespace attnguard {

namespace {

using nlohmann::json;

struct CliOpts {
    std::string config_path;
    std::string out;
    std::string ckpt;
    std::string stats_path;
    std::string trace_path;
    std::string mode;
    std::string format = "json";
    uint64_t seed = 0;
    bool seed_set = false;
};

void add_common_flags(CLI::App* cmd, CliOpts& o) {
    cmd->add_option("--config", o.config_path, "run configuration (JSON)");
    cmd->add_option("--seed", o.seed, "override the config's RNG seed")
        ->each([&o](const std::string&) { o.seed_set = true; });
}

RunConfig load_run_config(const CliOpts& o) {
    RunConfig cfg = o.config_path.empty() ? parse_config("{}") : load_config(o.config_path);
    if (o.seed_set) cfg.seed = o.seed;
    return cfg;
}

std::ostream& open_out(const std::string& path, std::ofstream& file) {
    if (path.empty()) return std::cout;
    file.open(path);
    if (!file) throw IoError("cannot open output file " + path);
    return file;
}

void write_json_file(const json& j, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open output file " + path);
    f << j.dump(2) << "\n";
}

DetectionConfig detection_from_stats(const ReferenceStats& stats, const DetectionConfig& base) {
    DetectionConfig det = base;
    det.start_layer = stats.start_layer;
    det.num_layers = stats.num_layers;
    det.quantile = stats.quantile;
    return det;
}

void cmd_train(const CliOpts& o) {
    RunConfig cfg = load_run_config(o);
    std::string hash = config_hash(cfg);
    Pcg32 init_rng(cfg.seed, rng_stream::kInit);
    ModelParameters init = ModelParameters::init(cfg.model, init_rng);
    TrainResult result =
        train_pipeline(init, cfg.task, cfg.trigger, cfg.poison, cfg.train, cfg.seed);
    save_checkpoint(result.params, o.out, hash);
    write_json_file(json{{"version", 1},
                         {"tool_version", std::string(kToolVersion)},
                         {"config_hash", hash},
                         {"loss", result.loss_history}},
                    o.out + "/loss_history.json");
}

void cmd_calibrate(const CliOpts& o) {
    RunConfig cfg = load_run_config(o);
    ModelParameters params = load_checkpoint(o.ckpt);
    EvalSets sets = make_eval_sets(cfg);
    ReferenceStats stats = calibrate_on_samples(params, cfg.task, sets.val, cfg.detection);
    save_stats(stats, o.out, config_hash(cfg));
}

void cmd_detect(const CliOpts& o) {
    RunConfig cfg = load_run_config(o);
    ReferenceStats stats = load_stats(o.stats_path);
    TraceFile file = import_trace(o.trace_path);
    DetectionConfig det = detection_from_stats(stats, cfg.detection);
    std::vector<Detection> results = detect_records(file, stats, det);
    std::ofstream out_file;
    std::ostream& out = open_out(o.out, out_file);
    for (size_t i = 0; i < results.size(); ++i)
        out << json{{"id", file.records[i].id},
                    {"score", results[i].score},
                    {"flagged", results[i].is_poisoned}}
                   .dump()
            << "\n";
}

ReferenceStats stats_for_eval(const CliOpts& o, const RunConfig& cfg, const ModelParameters& params,
                              const EvalSets& sets) {
    if (!o.stats_path.empty()) return load_stats(o.stats_path);
    return calibrate_on_samples(params, cfg.task, sets.val, cfg.detection);
}

void cmd_purify(const CliOpts& o) {
    RunConfig cfg = load_run_config(o);
    ModelParameters params = load_checkpoint(o.ckpt);
    EvalSets sets = make_eval_sets(cfg);
    ReferenceStats stats = stats_for_eval(o, cfg, params, sets);
    DetectionConfig det = detection_from_stats(stats, cfg.detection);
    const TokenLayout layout = cfg.task.layout();
    std::ofstream out_file;
    std::ostream& out = open_out(o.out, out_file);
    auto run_set = [&](const std::vector<Sample>& samples, bool poisoned) {
        for (const Sample& s : samples) {
            PurifiedDecode pd = purified_decode(params, s.input_tokens(cfg.task), layout, stats,
                                                det, cfg.purifier.tau, cfg.purifier.bias);
            out << json{{"id", s.id},
                        {"poisoned", poisoned},
                        {"flagged", pd.flagged},
                        {"score", pd.score},
                        {"omega", std::vector<int>(pd.mask.omega.begin(), pd.mask.omega.end())},
                        {"output", pd.output},
                        {"reference", s.answer}}
                       .dump()
                << "\n";
        }
    };
    run_set(sets.clean, false);
    run_set(sets.poisoned, true);
}

void cmd_eval(const CliOpts& o) {
    RunConfig cfg = load_run_config(o);
    ModelParameters params = load_checkpoint(o.ckpt);
    EvalSets sets = make_eval_sets(cfg);
    DefenseSettings defense = cfg.harness.defense;
    if (!o.mode.empty()) defense.mode = defense_mode_from_string(o.mode);
    ReferenceStats stats = stats_for_eval(o, cfg, params, sets);
    DetectionConfig det = detection_from_stats(stats, cfg.detection);
    MetricsReport report =
        run_pipeline_eval(params, cfg.task, sets.clean, sets.poisoned, cfg.trigger.target, &stats,
                          det, defense, cfg.seed, config_hash(cfg));
    emit_report(report, o.out, o.format);
}

json metrics_row_json(const SweepRow& row) {
    json m{{"asr", row.metrics.asr},
           {"clean_accuracy", row.metrics.clean_acc},
           {"poisoned_accuracy", row.metrics.poisoned_acc},
           {"tpr", row.metrics.tpr ? json(*row.metrics.tpr) : json(nullptr)},
           {"fpr", row.metrics.fpr ? json(*row.metrics.fpr) : json(nullptr)},
           {"auroc", row.metrics.auroc ? json(*row.metrics.auroc) : json(nullptr)}};
    return json{{"value", row.value},
                {"metrics", std::move(m)},
                {"head_avg_auroc",
                 row.head_avg_auroc ? json(*row.head_avg_auroc) : json(nullptr)}};
}

void cmd_sweep(const CliOpts& o) {
    RunConfig cfg = load_run_config(o);
    ModelParameters params = load_checkpoint(o.ckpt);
    EvalSets sets = make_eval_sets(cfg);
    Pcg32 init_rng(cfg.seed, rng_stream::kInit);
    ModelParameters init = ModelParameters::init(cfg.model, init_rng);

    SweepContext ctx;
    ctx.params = &params;
    ctx.init = &init;
    ctx.task = cfg.task;
    ctx.trigger = cfg.trigger;
    ctx.train_cfg = cfg.train;
    ctx.det = cfg.detection;
    ctx.defense = cfg.harness.defense;
    ctx.val_clean = sets.val;
    ctx.test_clean = sets.clean;
    ctx.test_poisoned = sets.poisoned;
    ctx.seed = cfg.seed;
    ctx.config_hash = config_hash(cfg);

    std::vector<SweepRow> rows = sweep(ctx, cfg.harness.sweep);
    if (o.format == "json") {
        json out{{"report_version", 1},
                 {"tool_version", std::string(kToolVersion)},
                 {"config_hash", ctx.config_hash},
                 {"axis", to_string(cfg.harness.sweep.axis)},
                 {"rows", json::array()}};
        for (const SweepRow& r : rows) out["rows"].push_back(metrics_row_json(r));
        write_json_file(out, o.out);
    } else if (o.format == "csv") {
        std::ofstream f(o.out);
        if (!f) throw IoError("cannot open output file " + o.out);
        f << "value,asr,clean_accuracy,poisoned_accuracy,tpr,fpr,auroc,head_avg_auroc,"
             "config_hash,tool_version\n";
        auto opt = [](const std::optional<double>& v) {
            return v ? json(*v).dump() : std::string();
        };
        for (const SweepRow& r : rows)
            f << json(r.value).dump() << ',' << json(r.metrics.asr).dump() << ','
              << json(r.metrics.clean_acc).dump() << ',' << json(r.metrics.poisoned_acc).dump()
              << ',' << opt(r.metrics.tpr) << ',' << opt(r.metrics.fpr) << ','
              << opt(r.metrics.auroc) << ',' << opt(r.head_avg_auroc) << ',' << ctx.config_hash
              << ',' << kToolVersion << "\n";
    } else {
        throw ArgumentError("sweep: format must be json or csv");
    }
}

void cmd_export_trace(const CliOpts& o) {
    RunConfig cfg = load_run_config(o);
    ModelParameters params = load_checkpoint(o.ckpt);
    EvalSets sets = make_eval_sets(cfg);
    std::vector<Sample> all = sets.clean;
    all.insert(all.end(), sets.poisoned.begin(), sets.poisoned.end());
    export_trace(params, cfg.task, all, o.out, config_hash(cfg));
}

void cmd_lens(const CliOpts& o) {
    RunConfig cfg = load_run_config(o);
    ModelParameters params = load_checkpoint(o.ckpt);
    EvalSets sets = make_eval_sets(cfg);
    LensReport report = logit_lens_report(params, cfg.task, sets.clean, sets.poisoned,
                                          cfg.trigger.target, cfg.detection, cfg.purifier.tau,
                                          cfg.purifier.bias);
    auto curves = [](const LensCurves& c) {
        return json{{"correct", c.correct}, {"target", c.target}};
    };
    write_json_file(json{{"report_version", 1},
                         {"tool_version", std::string(kToolVersion)},
                         {"config_hash", config_hash(cfg)},
                         {"clean", curves(report.clean)},
                         {"poisoned_undefended", curves(report.poisoned_undefended)},
                         {"poisoned_defended", curves(report.poisoned_defended)}},
                    o.out);
}

void cmd_locate_fusion(const CliOpts& o) {
    RunConfig cfg = load_run_config(o);
    ModelParameters params = load_checkpoint(o.ckpt);
    EvalSets sets = make_eval_sets(cfg);
    FusionOnset onset =
        locate_fusion_onset(params, cfg.task, sets.clean, cfg.harness.fusion_delta);
    json j{{"report_version", 1},
           {"tool_version", std::string(kToolVersion)},
           {"config_hash", config_hash(cfg)},
           {"onset_layer", onset.onset_layer},
           {"baseline_accuracy", onset.baseline_acc},
           {"drops", onset.drops}};
    if (o.out.empty())
        std::cout << j.dump(2) << "\n";
    else
        write_json_file(j, o.out);
}

void cmd_grad_check(const CliOpts& o) {
    RunConfig cfg = load_run_config(o);
    Pcg32 init_rng(cfg.seed, rng_stream::kInit);
    ModelParameters params = ModelParameters::init(cfg.model, init_rng);
    Pcg32 data_rng(cfg.seed, rng_stream::kTrainData);
    std::vector<Sample> samples = gen_clean(cfg.task, data_rng, 2);
    std::vector<const Sample*> batch{&samples[0], &samples[1]};

    std::vector<Tensor> flat;
    params.visit([&](const std::string&, Tensor& t) { flat.push_back(t); });
    LossBuilder build = [&](GradientTape& tape, const std::vector<Val>& leaves) {
        return build_model_loss(tape, leaves, cfg.model, cfg.task, batch);
    };
    Pcg32 rng(cfg.seed, rng_stream::kGradCheck);
    double err = grad_check(build, flat, 1e-5, 2, rng);
    std::cout << json{{"max_relative_error", err}, {"tolerance", 1e-5}}.dump() << "\n";
    if (err > 1e-5) throw NumericalError("grad-check: relative error above tolerance");
}

} // namespace

int cli_main(int argc, const char* const* argv) {
    if (const char* env = std::getenv("ATTNGUARD_THREADS")) {
        char* end = nullptr;
        long n = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || n < 1) {
            std::cerr << "ATTNGUARD_THREADS must be a positive integer\n";
            return 2;
        }
        // every stage is currently a deterministic single-threaded reduction;
        // the cap is accepted but never exceeded by construction
    }

    CLI::App app{"attnguard: attention-ratio backdoor detection and visual-token pruning"};
    app.require_subcommand(1);
    CliOpts o;

    auto* train_cmd = app.add_subcommand("train", "train a (possibly backdoored) checkpoint");
    add_common_flags(train_cmd, o);
    train_cmd->add_option("--out", o.out, "checkpoint directory")->required();

    auto* cal_cmd = app.add_subcommand("calibrate", "fit clean reference statistics");
    add_common_flags(cal_cmd, o);
    cal_cmd->add_option("--ckpt", o.ckpt, "checkpoint directory")->required();
    cal_cmd->add_option("--out", o.out, "stats file (JSON)")->required();

    auto* det_cmd = app.add_subcommand("detect", "score exported traces against stats");
    add_common_flags(det_cmd, o);
    det_cmd->add_option("--stats", o.stats_path, "stats file")->required();
    det_cmd->add_option("--trace", o.trace_path, "trace file (NDJSON)")->required();
    det_cmd->add_option("--out", o.out, "results file (default stdout)");

    auto* pur_cmd = app.add_subcommand("purify", "detect-then-prune decoding per sample");
    add_common_flags(pur_cmd, o);
    pur_cmd->add_option("--ckpt", o.ckpt, "checkpoint directory")->required();
    pur_cmd->add_option("--stats", o.stats_path, "stats file (calibrated in-process if omitted)");
    pur_cmd->add_option("--out", o.out, "results file (default stdout)");

    auto* eval_cmd = app.add_subcommand("eval", "full defense evaluation in one mode");
    add_common_flags(eval_cmd, o);
    eval_cmd->add_option("--ckpt", o.ckpt, "checkpoint directory")->required();
    eval_cmd->add_option("--mode", o.mode,
                         "none|cleansight|no_detection|random_prune|interp|noise");
    eval_cmd->add_option("--stats", o.stats_path, "stats file (calibrated in-process if omitted)");
    eval_cmd->add_option("--out", o.out, "report file")->required();
    eval_cmd->add_option("--format", o.format, "json|csv");

    auto* sweep_cmd = app.add_subcommand("sweep", "grid experiment over one axis");
    add_common_flags(sweep_cmd, o);
    sweep_cmd->add_option("--ckpt", o.ckpt, "checkpoint directory")->required();
    sweep_cmd->add_option("--out", o.out, "table file")->required();
    sweep_cmd->add_option("--format", o.format, "json|csv");

    auto* exp_cmd = app.add_subcommand("export-trace", "export attention traces as NDJSON");
    add_common_flags(exp_cmd, o);
    exp_cmd->add_option("--ckpt", o.ckpt, "checkpoint directory")->required();
    exp_cmd->add_option("--out", o.out, "trace file (NDJSON)")->required();

    auto* lens_cmd = app.add_subcommand("lens", "per-layer token probabilities (logit lens)");
    add_common_flags(lens_cmd, o);
    lens_cmd->add_option("--ckpt", o.ckpt, "checkpoint directory")->required();
    lens_cmd->add_option("--out", o.out, "report file (JSON)")->required();

    auto* loc_cmd = app.add_subcommand("locate-fusion", "find the cross-modal fusion onset layer");
    add_common_flags(loc_cmd, o);
    loc_cmd->add_option("--ckpt", o.ckpt, "checkpoint directory")->required();
    loc_cmd->add_option("--out", o.out, "report file (default stdout)");

    auto* gc_cmd = app.add_subcommand("grad-check", "verify gradients by central differences");
    add_common_flags(gc_cmd, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (train_cmd->parsed()) cmd_train(o);
        else if (cal_cmd->parsed()) cmd_calibrate(o);
        else if (det_cmd->parsed()) cmd_detect(o);
        else if (pur_cmd->parsed()) cmd_purify(o);
        else if (eval_cmd->parsed()) cmd_eval(o);
        else if (sweep_cmd->parsed()) cmd_sweep(o);
        else if (exp_cmd->parsed()) cmd_export_trace(o);
        else if (lens_cmd->parsed()) cmd_lens(o);
        else if (loc_cmd->parsed()) cmd_locate_fusion(o);
        else if (gc_cmd->parsed()) cmd_grad_check(o);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace attnguard
