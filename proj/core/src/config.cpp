#include "smmr/config.hpp"

#include <set>

#include <json.hpp>

#include "smmr/digest.hpp"
#include "smmr/errors.hpp"
#include "smmr/util.hpp"

namespace smmr {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& source, const std::string& path,
                       const std::string& what) {
    throw ConfigError(source + ": " + path + ": " + what);
}

void expect_object(const json& j, const std::string& source, const std::string& path) {
    if (!j.is_object()) fail(source, path, "must be an object");
}

void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& source, const std::string& path) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (allowed.find(it.key()) == allowed.end()) {
            fail(source, path, "unknown field '" + it.key() + "'");
        }
    }
}

std::string get_string(const json& obj, const char* field, const std::string& source,
                       const std::string& path) {
    if (!obj.contains(field)) fail(source, path, std::string("missing field '") + field + "'");
    if (!obj[field].is_string()) {
        fail(source, path + "." + field, "must be a string");
    }
    return obj[field].get<std::string>();
}

int get_int(const json& value, const std::string& source, const std::string& path) {
    if (!value.is_number_integer()) fail(source, path, "must be an integer");
    return value.get<int>();
}

double get_number(const json& value, const std::string& source, const std::string& path) {
    if (!value.is_number()) fail(source, path, "must be a number");
    return value.get<double>();
}

bool get_bool(const json& value, const std::string& source, const std::string& path) {
    if (!value.is_boolean()) fail(source, path, "must be a boolean");
    return value.get<bool>();
}

SamplingParams parse_sampling(const json& j, const std::string& source,
                              const std::string& path) {
    expect_object(j, source, path);
    check_keys(j, {"temperature", "top_p", "seed"}, source, path);
    SamplingParams s;
    if (j.contains("temperature")) {
        s.temperature = get_number(j["temperature"], source, path + ".temperature");
    }
    if (j.contains("top_p")) s.top_p = get_number(j["top_p"], source, path + ".top_p");
    if (j.contains("seed")) {
        if (!j["seed"].is_number_integer()) fail(source, path + ".seed", "must be an integer");
        s.seed = j["seed"].get<long long>();
    }
    return s;
}

MockEntry parse_mock_entry(const json& j, const std::string& source, const std::string& path) {
    expect_object(j, source, path);
    check_keys(j, {"response", "fail", "layer_index", "input_digest"}, source, path);
    MockEntry e;
    if (j.contains("response")) e.response = get_string(j, "response", source, path);
    if (j.contains("fail")) e.fail = get_bool(j["fail"], source, path + ".fail");
    if (e.response.empty() && !e.fail) {
        fail(source, path, "needs a 'response' or 'fail: true'");
    }
    return e;
}

MockScript parse_script(const json& j, const std::string& source, const std::string& path) {
    expect_object(j, source, path);
    check_keys(j, {"default", "entries"}, source, path);
    MockScript script;
    if (j.contains("default")) {
        script.default_entry = parse_mock_entry(j["default"], source, path + ".default");
    }
    if (j.contains("entries")) {
        if (!j["entries"].is_array()) fail(source, path + ".entries", "must be an array");
        size_t idx = 0;
        for (const json& entry : j["entries"]) {
            std::string epath = path + ".entries[" + std::to_string(idx++) + "]";
            expect_object(entry, source, epath);
            if (!entry.contains("layer_index")) fail(source, epath, "missing 'layer_index'");
            if (!entry.contains("input_digest")) fail(source, epath, "missing 'input_digest'");
            int layer = get_int(entry["layer_index"], source, epath + ".layer_index");
            std::string digest = get_string(entry, "input_digest", source, epath);
            script.entries[{layer, digest}] = parse_mock_entry(entry, source, epath);
        }
    }
    return script;
}

ExpertSpec parse_expert(const json& j, const std::string& source, const std::string& path) {
    expect_object(j, source, path);
    check_keys(j,
               {"expert_id", "role", "backend", "model_name", "endpoint_url", "sampling",
                "max_output_tokens", "script"},
               source, path);
    ExpertSpec e;
    e.expert_id = get_string(j, "expert_id", source, path);
    try {
        e.role = expert_role_from_string(get_string(j, "role", source, path));
        if (j.contains("backend")) {
            e.backend = backend_kind_from_string(get_string(j, "backend", source, path));
        }
    } catch (const DomainError& err) {
        fail(source, path, err.what());
    }
    e.model_name = get_string(j, "model_name", source, path);
    if (j.contains("endpoint_url")) {
        e.endpoint_url = get_string(j, "endpoint_url", source, path);
    }
    if (j.contains("sampling")) {
        e.sampling = parse_sampling(j["sampling"], source, path + ".sampling");
    }
    if (j.contains("max_output_tokens")) {
        e.max_output_tokens = get_int(j["max_output_tokens"], source, path + ".max_output_tokens");
    }
    if (j.contains("script")) {
        if (e.backend != BackendKind::scripted_mock) {
            fail(source, path + ".script", "only scripted_mock experts take a script");
        }
        e.script = parse_script(j["script"], source, path + ".script");
    }
    if (e.backend == BackendKind::http_chat && e.endpoint_url.empty()) {
        fail(source, path, "http_chat expert needs an endpoint_url");
    }
    return e;
}

// The template map gives ids to files; a layer may instead inline its text.
struct TemplateTable {
    std::map<std::string, std::string> texts; // id -> contents
};

TemplateTable parse_templates(const json& root, const std::filesystem::path& base_dir,
                              const std::string& source) {
    TemplateTable table;
    if (!root.contains("templates")) return table;
    expect_object(root["templates"], source, "templates");
    for (auto it = root["templates"].begin(); it != root["templates"].end(); ++it) {
        if (!it.value().is_string()) {
            fail(source, "templates." + it.key(), "must be a file path string");
        }
        std::filesystem::path p = base_dir / it.value().get<std::string>();
        try {
            table.texts[it.key()] = read_text_file(p);
        } catch (const IngestError& e) {
            fail(source, "templates." + it.key(), e.what());
        }
    }
    return table;
}

// Resolves either {"template": "<id>"} or {"template_text": "..."}.
void resolve_template(const json& obj, const TemplateTable& table, const std::string& source,
                      const std::string& path, std::string& id_out, std::string& text_out) {
    bool by_id = obj.contains("template");
    bool inline_text = obj.contains("template_text");
    if (by_id == inline_text) {
        fail(source, path, "needs exactly one of 'template' or 'template_text'");
    }
    if (by_id) {
        id_out = get_string(obj, "template", source, path);
        auto it = table.texts.find(id_out);
        if (it == table.texts.end()) {
            fail(source, path + ".template", "unknown template id '" + id_out + "'");
        }
        text_out = it->second;
    } else {
        id_out = "(inline)";
        text_out = get_string(obj, "template_text", source, path);
    }
}

} // namespace

std::string config_canonical_digest(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return sha256_hex(doc.dump());
}

PipelineConfig parse_pipeline_config(const std::string& json_text,
                                     const std::filesystem::path& base_dir,
                                     const std::string& source_name) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const std::exception& e) {
        throw ConfigError(source_name + ": invalid JSON: " + e.what());
    }
    expect_object(root, source_name, "(root)");
    check_keys(root,
               {"task", "templates", "layers", "final", "stopping",
                "include_original_input_in_refinement", "parallelism", "retry", "rules"},
               source_name, "(root)");

    PipelineConfig config;
    try {
        config.task = task_from_string(get_string(root, "task", source_name, "(root)"));
    } catch (const DomainError& e) {
        fail(source_name, "task", e.what());
    }

    TemplateTable templates = parse_templates(root, base_dir, source_name);

    if (!root.contains("layers") || !root["layers"].is_array()) {
        fail(source_name, "layers", "must be an array");
    }
    size_t layer_idx = 0;
    for (const json& layer_json : root["layers"]) {
        std::string path = "layers[" + std::to_string(layer_idx++) + "]";
        expect_object(layer_json, source_name, path);
        check_keys(layer_json, {"template", "template_text", "experts"}, source_name, path);
        LayerSpec layer;
        resolve_template(layer_json, templates, source_name, path, layer.template_id,
                         layer.template_text);
        if (!layer_json.contains("experts") || !layer_json["experts"].is_array()) {
            fail(source_name, path + ".experts", "must be an array");
        }
        size_t expert_idx = 0;
        for (const json& expert_json : layer_json["experts"]) {
            layer.experts.push_back(parse_expert(
                expert_json, source_name,
                path + ".experts[" + std::to_string(expert_idx++) + "]"));
        }
        config.layers.push_back(std::move(layer));
    }

    if (!root.contains("final")) fail(source_name, "final", "missing consolidation block");
    const json& final_json = root["final"];
    expect_object(final_json, source_name, "final");
    check_keys(final_json, {"template", "template_text", "expert"}, source_name, "final");
    resolve_template(final_json, templates, source_name, "final", config.final_template_id,
                     config.final_template_text);
    if (!final_json.contains("expert")) fail(source_name, "final.expert", "missing expert");
    config.final_expert = parse_expert(final_json["expert"], source_name, "final.expert");

    if (root.contains("stopping")) {
        const json& stop_json = root["stopping"];
        expect_object(stop_json, source_name, "stopping");
        check_keys(stop_json, {"metric", "delta", "calibration_ids"}, source_name, "stopping");
        StoppingPolicy stopping;
        if (stop_json.contains("metric")) {
            try {
                stopping.metric = stopping_metric_from_string(
                    get_string(stop_json, "metric", source_name, "stopping"));
            } catch (const DomainError& e) {
                fail(source_name, "stopping.metric", e.what());
            }
        }
        if (!stop_json.contains("delta")) fail(source_name, "stopping.delta", "missing");
        stopping.delta = get_number(stop_json["delta"], source_name, "stopping.delta");
        if (!stop_json.contains("calibration_ids") || !stop_json["calibration_ids"].is_array()) {
            fail(source_name, "stopping.calibration_ids", "must be an array");
        }
        for (const json& id : stop_json["calibration_ids"]) {
            if (!id.is_string()) {
                fail(source_name, "stopping.calibration_ids", "must contain strings");
            }
            stopping.calibration_ids.push_back(id.get<std::string>());
        }
        config.stopping = std::move(stopping);
    }

    if (root.contains("include_original_input_in_refinement")) {
        config.include_original_input_in_refinement =
            get_bool(root["include_original_input_in_refinement"], source_name,
                     "include_original_input_in_refinement");
    }
    if (root.contains("parallelism")) {
        config.parallelism = get_int(root["parallelism"], source_name, "parallelism");
    }
    if (root.contains("retry")) {
        const json& retry_json = root["retry"];
        expect_object(retry_json, source_name, "retry");
        check_keys(retry_json, {"budget", "base_delay_ms", "max_delay_ms", "jitter"},
                   source_name, "retry");
        if (retry_json.contains("budget")) {
            config.retry.budget = get_int(retry_json["budget"], source_name, "retry.budget");
        }
        if (retry_json.contains("base_delay_ms")) {
            config.retry.base_delay_ms =
                get_int(retry_json["base_delay_ms"], source_name, "retry.base_delay_ms");
        }
        if (retry_json.contains("max_delay_ms")) {
            config.retry.max_delay_ms =
                get_int(retry_json["max_delay_ms"], source_name, "retry.max_delay_ms");
        }
        if (retry_json.contains("jitter")) {
            config.retry.jitter = get_bool(retry_json["jitter"], source_name, "retry.jitter");
        }
    }
    if (root.contains("rules")) {
        const json& rules_json = root["rules"];
        expect_object(rules_json, source_name, "rules");
        check_keys(rules_json, {"labeled_patterns", "fallback_enabled"}, source_name, "rules");
        ParseRules rules = ParseRules::defaults_for(config.task);
        if (rules_json.contains("labeled_patterns")) {
            if (!rules_json["labeled_patterns"].is_array()) {
                fail(source_name, "rules.labeled_patterns", "must be an array");
            }
            rules.labeled_patterns.clear();
            for (const json& p : rules_json["labeled_patterns"]) {
                if (!p.is_string()) {
                    fail(source_name, "rules.labeled_patterns", "must contain strings");
                }
                rules.labeled_patterns.push_back(to_lower(p.get<std::string>()));
            }
        }
        if (rules_json.contains("fallback_enabled")) {
            rules.fallback_enabled =
                get_bool(rules_json["fallback_enabled"], source_name, "rules.fallback_enabled");
        }
        config.rules = std::move(rules);
    }

    config.config_digest = sha256_hex(root.dump());

    try {
        config.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(source_name + ": " + e.what());
    }
    return config;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    return parse_pipeline_config(read_text_file(path), path.parent_path(), path.string());
}

} // namespace smmr
