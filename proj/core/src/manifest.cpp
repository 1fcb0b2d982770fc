#include "smmr/manifest.hpp"

#include <sstream>

#include <json.hpp>

#include "smmr/errors.hpp"
#include "smmr/util.hpp"

namespace smmr {

using nlohmann::json;

namespace {

json parsed_to_json(const ParsedAssessment& p) {
    json j;
    j["valid"] = p.valid;
    if (p.phq8) j["phq8"] = *p.phq8;
    if (p.binary) j["binary"] = *p.binary;
    if (p.concern) j["concern"] = *p.concern;
    if (p.disorders) j["disorders"] = *p.disorders;
    return j;
}

ParsedAssessment parsed_from_json(const json& j, const std::string& where) {
    if (!j.is_object() || !j.contains("valid") || !j["valid"].is_boolean()) {
        throw IngestError(where + ": malformed parsed assessment");
    }
    ParsedAssessment p;
    p.valid = j["valid"].get<bool>();
    if (j.contains("phq8")) p.phq8 = j["phq8"].get<int>();
    if (j.contains("binary")) p.binary = j["binary"].get<int>();
    if (j.contains("concern")) p.concern = j["concern"].get<int>();
    if (j.contains("disorders")) {
        p.disorders = j["disorders"].get<std::vector<std::string>>();
    }
    return p;
}

json output_to_json(const ExpertOutput& o) {
    json j;
    j["expert_id"] = o.expert_id;
    j["layer_index"] = o.layer_index;
    j["input_digest"] = o.input_digest;
    j["raw_text"] = o.raw_text;
    j["parsed"] = parsed_to_json(o.parsed);
    j["volatile"] = json{{"latency_ms", o.latency_ms}, {"from_cache", o.from_cache}};
    return j;
}

ExpertOutput output_from_json(const json& j, const std::string& where) {
    for (const char* field : {"expert_id", "layer_index", "input_digest", "raw_text", "parsed"}) {
        if (!j.contains(field)) {
            throw IngestError(where + ": expert output missing '" + field + "'");
        }
    }
    ExpertOutput o;
    o.expert_id = j["expert_id"].get<std::string>();
    o.layer_index = j["layer_index"].get<int>();
    o.input_digest = j["input_digest"].get<std::string>();
    o.raw_text = j["raw_text"].get<std::string>();
    o.parsed = parsed_from_json(j["parsed"], where);
    if (j.contains("volatile") && j["volatile"].is_object()) {
        const json& v = j["volatile"];
        if (v.contains("latency_ms")) o.latency_ms = v["latency_ms"].get<long long>();
        if (v.contains("from_cache")) o.from_cache = v["from_cache"].get<bool>();
    }
    return o;
}

json layer_record_to_json(const CaseLayerRecord& r) {
    json j;
    j["layer_index"] = r.layer_index;
    json outputs = json::array();
    for (const ExpertOutput& o : r.outputs) outputs.push_back(output_to_json(o));
    j["outputs"] = std::move(outputs);
    j["point_prediction"] = parsed_to_json(r.point_prediction);
    j["failures"] = r.failures;
    return j;
}

CaseLayerRecord layer_record_from_json(const json& j, const std::string& where) {
    if (!j.is_object() || !j.contains("layer_index") || !j.contains("outputs")) {
        throw IngestError(where + ": malformed layer record");
    }
    CaseLayerRecord r;
    r.layer_index = j["layer_index"].get<int>();
    for (const json& o : j["outputs"]) r.outputs.push_back(output_from_json(o, where));
    if (j.contains("point_prediction")) {
        r.point_prediction = parsed_from_json(j["point_prediction"], where);
    }
    if (j.contains("failures")) r.failures = j["failures"].get<std::vector<std::string>>();
    return r;
}

json case_to_json(const CaseRecord& c) {
    json j;
    j["record"] = "case";
    j["case_id"] = c.case_id;
    json cal = json::array();
    for (const CaseLayerRecord& r : c.calibration_layers) cal.push_back(layer_record_to_json(r));
    j["calibration_layers"] = std::move(cal);
    json fin = json::array();
    for (const CaseLayerRecord& r : c.final_layers) fin.push_back(layer_record_to_json(r));
    j["final_layers"] = std::move(fin);
    j["consolidation"] = c.consolidation ? output_to_json(*c.consolidation) : json(nullptr);
    j["final_assessment"] = parsed_to_json(c.final_assessment);
    j["error"] = c.error;
    return j;
}

CaseRecord case_from_json(const json& j, const std::string& where) {
    if (!j.contains("case_id") || !j["case_id"].is_string()) {
        throw IngestError(where + ": case record missing 'case_id'");
    }
    CaseRecord c;
    c.case_id = j["case_id"].get<std::string>();
    if (j.contains("calibration_layers")) {
        for (const json& r : j["calibration_layers"]) {
            c.calibration_layers.push_back(layer_record_from_json(r, where));
        }
    }
    if (j.contains("final_layers")) {
        for (const json& r : j["final_layers"]) {
            c.final_layers.push_back(layer_record_from_json(r, where));
        }
    }
    if (j.contains("consolidation") && !j["consolidation"].is_null()) {
        c.consolidation = output_from_json(j["consolidation"], where);
    }
    if (!j.contains("final_assessment")) {
        throw IngestError(where + ": case record missing 'final_assessment'");
    }
    c.final_assessment = parsed_from_json(j["final_assessment"], where);
    if (j.contains("error")) c.error = j["error"].get<std::string>();
    return c;
}

json header_to_json(const RunManifest& m) {
    json j;
    j["record"] = "header";
    j["schema_version"] = m.schema_version;
    j["run_id"] = m.run_id;
    j["config_digest"] = m.config_digest;
    j["dataset_digest"] = m.dataset_digest;
    j["task"] = std::string(to_string(m.task));
    j["selected_depth"] = m.selected_depth;
    json metrics = json::array();
    for (const LayerCalibrationMetric& lm : m.calibration_metrics) {
        json mj;
        mj["layer_index"] = lm.layer_index;
        mj["metric_value"] = lm.metric_value ? json(*lm.metric_value) : json(nullptr);
        mj["n_scored"] = lm.n_scored;
        metrics.push_back(std::move(mj));
    }
    j["calibration_metrics"] = std::move(metrics);
    j["n_cases"] = m.cases.size();
    j["volatile"] = json{{"started", m.started}, {"finished", m.finished}};
    return j;
}

} // namespace

std::string run_manifest_to_jsonl(const RunManifest& manifest) {
    std::string out = header_to_json(manifest).dump();
    out += '\n';
    for (const CaseRecord& c : manifest.cases) {
        out += case_to_json(c).dump();
        out += '\n';
    }
    return out;
}

void write_run_manifest(const std::filesystem::path& path, const RunManifest& manifest) {
    write_file_atomic(path, run_manifest_to_jsonl(manifest));
}

RunManifest parse_run_manifest(const std::string& jsonl_text, const std::string& source_name) {
    std::istringstream in(jsonl_text);
    std::string line;
    size_t line_no = 0;
    RunManifest manifest;
    bool header_seen = false;
    size_t declared_cases = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::string where = source_name + ":" + std::to_string(line_no);
        json j;
        try {
            j = json::parse(line);
        } catch (const std::exception& e) {
            throw IngestError(where + ": invalid JSON: " + e.what());
        }
        if (!j.is_object() || !j.contains("record") || !j["record"].is_string()) {
            throw IngestError(where + ": record without a 'record' field");
        }
        std::string kind = j["record"].get<std::string>();
        if (kind == "header") {
            if (header_seen) throw IngestError(where + ": duplicate header record");
            header_seen = true;
            if (!j.contains("schema_version") || !j["schema_version"].is_number_integer()) {
                throw IngestError(where + ": header missing 'schema_version'");
            }
            manifest.schema_version = j["schema_version"].get<int>();
            if (manifest.schema_version != 1) {
                throw IngestError(where + ": unsupported schema_version " +
                                  std::to_string(manifest.schema_version));
            }
            for (const char* field : {"run_id", "config_digest", "dataset_digest", "task"}) {
                if (!j.contains(field) || !j[field].is_string()) {
                    throw IngestError(where + ": header missing '" + field + "'");
                }
            }
            manifest.run_id = j["run_id"].get<std::string>();
            manifest.config_digest = j["config_digest"].get<std::string>();
            manifest.dataset_digest = j["dataset_digest"].get<std::string>();
            try {
                manifest.task = task_from_string(j["task"].get<std::string>());
            } catch (const DomainError& e) {
                throw IngestError(where + ": " + e.what());
            }
            if (!j.contains("selected_depth") || !j["selected_depth"].is_number_integer()) {
                throw IngestError(where + ": header missing 'selected_depth'");
            }
            manifest.selected_depth = j["selected_depth"].get<int>();
            if (j.contains("calibration_metrics")) {
                for (const json& mj : j["calibration_metrics"]) {
                    LayerCalibrationMetric lm;
                    lm.layer_index = mj.at("layer_index").get<int>();
                    if (!mj.at("metric_value").is_null()) {
                        lm.metric_value = mj["metric_value"].get<double>();
                    }
                    lm.n_scored = mj.at("n_scored").get<int>();
                    manifest.calibration_metrics.push_back(lm);
                }
            }
            if (j.contains("n_cases")) declared_cases = j["n_cases"].get<size_t>();
            if (j.contains("volatile") && j["volatile"].is_object()) {
                const json& v = j["volatile"];
                if (v.contains("started")) manifest.started = v["started"].get<std::string>();
                if (v.contains("finished")) manifest.finished = v["finished"].get<std::string>();
            }
        } else if (kind == "case") {
            if (!header_seen) throw IngestError(where + ": case record before header");
            manifest.cases.push_back(case_from_json(j, where));
        } else {
            throw IngestError(where + ": unknown record kind '" + kind + "'");
        }
    }
    if (!header_seen) throw IngestError(source_name + ": no header record");
    if (declared_cases != manifest.cases.size()) {
        throw IngestError(source_name + ": header declares " + std::to_string(declared_cases) +
                          " cases but " + std::to_string(manifest.cases.size()) + " found");
    }
    return manifest;
}

RunManifest load_run_manifest(const std::filesystem::path& path) {
    return parse_run_manifest(read_text_file(path), path.string());
}

namespace {

void strip_volatile(json& j) {
    if (j.is_object()) {
        j.erase("volatile");
        for (auto& [key, value] : j.items()) {
            (void)key;
            strip_volatile(value);
        }
    } else if (j.is_array()) {
        for (json& item : j) strip_volatile(item);
    }
}

} // namespace

std::string manifest_stable_text(const std::string& jsonl_text) {
    std::istringstream in(jsonl_text);
    std::string line;
    std::string out;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        json j = json::parse(line);
        strip_volatile(j);
        out += j.dump();
        out += '\n';
    }
    return out;
}

} // namespace smmr
