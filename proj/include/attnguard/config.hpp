// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "attnguard/detector.hpp"
#include "attnguard/harness.hpp"
#include "attnguard/model.hpp"
#include "attnguard/task.hpp"
#include "attnguard/train.hpp"

namespace attnguard {

struct PurifierParams {
    double tau = 1e-4;
    double bias = -1e9;
};

struct HarnessParams {
    int test_clean = 256;
    int test_poisoned = 256;
    int val_size = 200;
    double fusion_delta = 10.0;
    DefenseSettings defense;
    SweepSpec sweep;
};

struct RunConfig {
    uint64_t seed = 0;
    std::string prng = "pcg32";
    ModelConfig model;
    TaskSpec task;
    TriggerSpec trigger;
    PoisonConfig poison;
    TrainConfig train;
    DetectionConfig detection;
    PurifierParams purifier;
    HarnessParams harness;

    void validate() const;
};

// Parses and fully validates a config document: duplicate keys, unknown keys
// (named by path) and out-of-range values are all rejected; omitted fields get
// the documented defaults.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);

// Canonical JSON with every default applied; embedded in run metadata.
std::string effective_config_json(const RunConfig& cfg);

// FNV-1a 64 over the canonical effective config, as a fixed-width hex string.
std::string config_hash(const RunConfig& cfg);

struct EvalSets {
    std::vector<Sample> val;      // clean calibration pool
    std::vector<Sample> clean;    // clean test set
    std::vector<Sample> poisoned; // triggered test set, ground-truth answers kept
};

// Deterministic evaluation sets from the config's seed and harness sizes.
EvalSets make_eval_sets(const RunConfig& cfg);

} // namespace attnguard
