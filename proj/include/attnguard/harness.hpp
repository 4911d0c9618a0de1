// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "attnguard/detector.hpp"
#include "attnguard/purifier.hpp"
#include "attnguard/task.hpp"
#include "attnguard/train.hpp"

namespace attnguard {

// Mann–Whitney AUROC with midrank tie handling.
double auroc(const std::vector<double>& positive, const std::vector<double>& negative);

// Strict d > gamma flagging; throws UndefinedRateError when a class is absent.
std::pair<double, double> tpr_fpr(const std::vector<double>& scores,
                                  const std::vector<bool>& poisoned, double gamma);

// Probe each sample once and calibrate reference statistics on the ratios.
ReferenceStats calibrate_on_samples(const ModelParameters& params, const TaskSpec& task,
                                    const std::vector<Sample>& val, const DetectionConfig& det);

enum class DefenseMode { none, cleansight, no_detection, random_prune, interp, noise };

DefenseMode defense_mode_from_string(const std::string& s);
std::string to_string(DefenseMode m);

struct DefenseSettings {
    DefenseMode mode = DefenseMode::cleansight;
    double tau = 1e-4;
    double bias = -1e9;
    double random_fraction = 0.9; // random_prune
    double lambda = 1.0;          // interp
    double noise_intensity = 0.3; // noise
};

struct SampleRecord {
    long long id = 0;
    bool poisoned = false;
    double score = 0.0;
    bool flagged = false;
    int omega_size = 0;
    std::vector<int> output;
    std::vector<int> reference; // ground-truth answer of the pre-trigger sample
};

struct MetricsReport {
    std::string mode;
    double asr = 0.0;          // percent, over the poisoned set
    double clean_acc = 0.0;    // percent (toy-accuracy, exact match)
    double poisoned_acc = 0.0; // percent, against pre-trigger ground truth
    std::optional<double> tpr, fpr; // percent
    std::optional<double> auroc;    // [0, 1]
    std::vector<SampleRecord> records;
    uint64_t seed = 0;
    std::string config_hash;
};

// One full evaluation of a defense mode over clean + poisoned test sets.
// Detection metrics (scores, TPR/FPR/AUROC) are filled whenever stats are
// available, whether or not the mode consults the detector.
MetricsReport run_pipeline_eval(const ModelParameters& params, const TaskSpec& task,
                                const std::vector<Sample>& clean_test,
                                const std::vector<Sample>& poisoned_test,
                                const std::vector<int>& target, const ReferenceStats* stats,
                                const DetectionConfig& det, const DefenseSettings& defense,
                                uint64_t seed, const std::string& config_hash = "");

enum class SweepAxis {
    start_layer,
    num_layers,
    gamma_quantile,
    val_size,
    tau,
    interp_lambda,
    noise_intensity,
    poison_rate
};

SweepAxis sweep_axis_from_string(const std::string& s);
std::string to_string(SweepAxis a);

struct SweepSpec {
    SweepAxis axis = SweepAxis::tau;
    std::vector<double> grid;
};

struct SweepContext {
    const ModelParameters* params = nullptr; // trained checkpoint
    const ModelParameters* init = nullptr;   // untrained weights, poison_rate axis only
    TaskSpec task;
    TriggerSpec trigger;
    TrainConfig train_cfg;    // poison_rate axis only
    DetectionConfig det;
    DefenseSettings defense;
    std::vector<Sample> val_clean;           // calibration pool
    std::vector<Sample> test_clean, test_poisoned;
    uint64_t seed = 0;
    std::string config_hash;
};

struct SweepRow {
    double value = 0.0;
    MetricsReport metrics;
    // mean-of-ratios head-average baseline; layer axes only (Fig. 3 contrast)
    std::optional<double> head_avg_auroc;
};

std::vector<SweepRow> sweep(const SweepContext& ctx, const SweepSpec& spec);

// Per-layer exact-match accuracy with one attention edge class knocked out.
std::vector<double> knockout_curve(const ModelParameters& params, const TaskSpec& task,
                                   const std::vector<Sample>& samples, EdgeClass edge);

struct FusionOnset {
    int onset_layer = 0;             // 1-based, first vis->text knockout drop > delta
    double baseline_acc = 0.0;       // percent
    std::vector<double> drops;       // per layer, accuracy points
};

FusionOnset locate_fusion_onset(const ModelParameters& params, const TaskSpec& task,
                                const std::vector<Sample>& samples, double delta = 10.0);

struct LensCurves {
    std::vector<double> correct; // per layer, averaged probability
    std::vector<double> target;
};

struct LensReport {
    LensCurves clean, poisoned_undefended, poisoned_defended;
};

LensReport logit_lens_report(const ModelParameters& params, const TaskSpec& task,
                             const std::vector<Sample>& clean,
                             const std::vector<Sample>& poisoned, const std::vector<int>& target,
                             const DetectionConfig& det, double tau, double bias = -1e9);

void emit_report(const MetricsReport& report, const std::string& path, const std::string& format);
MetricsReport load_report_json(const std::string& path);

} // namespace attnguard
