// SPDX-License-Identifier: Apache-2.0
#include "attnguard/trace_io.hpp"

#include <cmath>
#include <fstream>

#include "attnguard/common.hpp"
#include "json.hpp"

namespace attnguard {

using nlohmann::json;

void export_trace(const ModelParameters& params, const TaskSpec& task,
                  const std::vector<Sample>& samples, const std::string& path,
                  const std::string& config_hash) {
    const TokenLayout layout = task.layout();
    std::ofstream f(path);
    if (!f) throw IoError("export_trace: cannot open " + path);
    json header{{"version", 1},
                {"layers", params.config.num_layers},
                {"heads", params.config.num_heads},
                {"layout", {{"sys_len", layout.sys_len},
                            {"vis_len", layout.vis_len},
                            {"prm_len", layout.prm_len}}},
                {"tool_version", std::string(kToolVersion)}};
    if (!config_hash.empty()) header["config_hash"] = config_hash;
    f << header.dump() << "\n";
    for (const Sample& s : samples) {
        ForwardOutput out = forward(params, s.input_tokens(task), layout);
        json rec{{"id", s.id}, {"rows", out.trace.rows}};
        f << rec.dump() << "\n";
    }
}

TraceFile import_trace(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("import_trace: cannot open " + path);
    TraceFile file;
    std::string line;
    int lineno = 0;
    bool have_header = false;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ParseError("trace line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!have_header) {
            if (j.value("version", -1) != 1)
                throw FormatError("import_trace: unsupported trace version");
            file.layers = j.at("layers").get<int>();
            file.heads = j.at("heads").get<int>();
            const json& lay = j.at("layout");
            file.layout.sys_len = lay.at("sys_len").get<int>();
            file.layout.vis_len = lay.at("vis_len").get<int>();
            file.layout.prm_len = lay.at("prm_len").get<int>();
            file.layout.validate();
            if (file.layers < 1 || file.heads < 1)
                throw FormatError("import_trace: header declares no layers or heads");
            have_header = true;
            continue;
        }
        TraceRecord rec;
        try {
            rec.id = j.at("id").get<long long>();
            rec.rows = j.at("rows").get<std::vector<std::vector<std::vector<double>>>>();
        } catch (const json::exception& e) {
            throw ParseError("trace line " + std::to_string(lineno) + ": " + e.what());
        }
        if (static_cast<int>(rec.rows.size()) != file.layers)
            throw FormatError("import_trace: sample " + std::to_string(rec.id) +
                              " has a layer count differing from the header");
        for (int l = 0; l < file.layers; ++l) {
            if (static_cast<int>(rec.rows[l].size()) != file.heads)
                throw FormatError("import_trace: sample " + std::to_string(rec.id) + ", layer " +
                                  std::to_string(l + 1) + ": head count differs from the header");
            for (int h = 0; h < file.heads; ++h) {
                double sum = 0.0;
                for (double v : rec.rows[l][h]) sum += v;
                if (std::abs(sum - 1.0) > 1e-6)
                    throw FormatError("import_trace: sample " + std::to_string(rec.id) +
                                      ", layer " + std::to_string(l + 1) + ", head " +
                                      std::to_string(h + 1) + ": attention row does not sum to 1");
            }
        }
        file.records.push_back(std::move(rec));
    }
    if (!have_header) throw FormatError("import_trace: missing header line");
    return file;
}

AttentionTrace to_attention_trace(const TraceRecord& record, const TraceFile& file) {
    AttentionTrace t;
    t.layout = file.layout;
    t.query_pos = file.layout.prm_end() - 1;
    t.rows = record.rows;
    return t;
}

std::vector<Detection> detect_records(const TraceFile& file, const ReferenceStats& stats,
                                      const DetectionConfig& cfg) {
    std::vector<Detection> out;
    out.reserve(file.records.size());
    for (const TraceRecord& rec : file.records)
        out.push_back(detect(to_attention_trace(rec, file), file.layout, stats, cfg));
    return out;
}

} // namespace attnguard
