// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "attnguard/detector.hpp"
#include "attnguard/model.hpp"
#include "attnguard/task.hpp"

namespace attnguard {

struct TraceRecord {
    long long id = 0;
    // rows[layer][head], each the full attention row of the last query position
    std::vector<std::vector<std::vector<double>>> rows;
};

struct TraceFile {
    int layers = 0;
    int heads = 0;
    TokenLayout layout;
    std::vector<TraceRecord> records;
};

// NDJSON: a self-describing header line, then one record per sample. Floats
// are written in shortest round-trip decimal, so re-imported traces reproduce
// in-process detection decisions bit-exactly.
void export_trace(const ModelParameters& params, const TaskSpec& task,
                  const std::vector<Sample>& samples, const std::string& path,
                  const std::string& config_hash = "");

TraceFile import_trace(const std::string& path);

AttentionTrace to_attention_trace(const TraceRecord& record, const TraceFile& file);

// Detection over an imported file; identical to running detect() in process.
std::vector<Detection> detect_records(const TraceFile& file, const ReferenceStats& stats,
                                      const DetectionConfig& cfg);

} // namespace attnguard
