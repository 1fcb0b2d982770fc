#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <string>
#include <vector>

#include "smmr/config.hpp"
#include "smmr/digest.hpp"
#include "smmr/errors.hpp"
#include "smmr/manifest.hpp"
#include "support/tmpdir.hpp"

using namespace smmr;
using smmr::testing::TmpDir;

namespace {

RunManifest sample_manifest() {
    RunManifest m;
    m.run_id = "abc123def456";
    m.config_digest = "cfg-digest";
    m.dataset_digest = "data-digest";
    m.task = Task::phq8_regression;
    m.selected_depth = 2;
    m.started = "2026-08-16T10:00:00Z";
    m.finished = "2026-08-16T10:05:00Z";

    LayerCalibrationMetric m1;
    m1.layer_index = 1;
    m1.metric_value = 0.625;
    m1.n_scored = 8;
    LayerCalibrationMetric m2;
    m2.layer_index = 2;
    m2.n_scored = 0; // metric stays undefined
    m.calibration_metrics = {m1, m2};

    ExpertOutput o1;
    o1.expert_id = "a1";
    o1.layer_index = 1;
    o1.input_digest = "d1";
    o1.raw_text = "PHQ-8 score: 12";
    o1.parsed.valid = true;
    o1.parsed.phq8 = 12;
    o1.parsed.binary = 1;
    o1.latency_ms = 42;
    o1.from_cache = true;

    ExpertOutput o2;
    o2.expert_id = "a2";
    o2.layer_index = 1;
    o2.input_digest = "d1";
    o2.raw_text = "";
    o2.parsed.valid = false;

    CaseLayerRecord layer;
    layer.layer_index = 1;
    layer.outputs = {o1, o2};
    layer.point_prediction = o1.parsed;
    layer.failures = {"expert 'a2': scripted failure"};

    ExpertOutput fin = o1;
    fin.expert_id = "consolidator";
    fin.layer_index = 2;

    CaseRecord good;
    good.case_id = "c1";
    good.calibration_layers = {layer};
    good.final_layers = {layer};
    good.consolidation = fin;
    good.final_assessment = fin.parsed;

    CaseRecord broken;
    broken.case_id = "c2";
    broken.error = "consolidation by 'consolidator' failed";

    m.cases = {good, broken};
    return m;
}

} // namespace

TEST_CASE("run manifest survives a serialization round trip") {
    RunManifest m = sample_manifest();
    std::string jsonl = run_manifest_to_jsonl(m);

    // one line per record, header first
    CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 3);
    CHECK(jsonl.rfind("{\"", 0) == 0);

    RunManifest back = parse_run_manifest(jsonl, "mem");
    CHECK(back.schema_version == 1);
    CHECK(back.run_id == m.run_id);
    CHECK(back.config_digest == m.config_digest);
    CHECK(back.dataset_digest == m.dataset_digest);
    CHECK(back.task == m.task);
    CHECK(back.selected_depth == 2);
    CHECK(back.started == m.started);
    CHECK(back.finished == m.finished);

    REQUIRE(back.calibration_metrics.size() == 2);
    CHECK(back.calibration_metrics[0].layer_index == 1);
    CHECK(back.calibration_metrics[0].metric_value == doctest::Approx(0.625));
    CHECK(back.calibration_metrics[0].n_scored == 8);
    CHECK(!back.calibration_metrics[1].metric_value.has_value());

    REQUIRE(back.cases.size() == 2);
    const CaseRecord& c1 = back.cases[0];
    CHECK(c1.case_id == "c1");
    CHECK(c1.error.empty());
    REQUIRE(c1.calibration_layers.size() == 1);
    REQUIRE(c1.final_layers.size() == 1);
    const CaseLayerRecord& layer = c1.final_layers[0];
    CHECK(layer.layer_index == 1);
    REQUIRE(layer.outputs.size() == 2);
    CHECK(layer.outputs[0].expert_id == "a1");
    CHECK(layer.outputs[0].raw_text == "PHQ-8 score: 12");
    CHECK(layer.outputs[0].parsed.phq8 == 12);
    CHECK(layer.outputs[0].latency_ms == 42);
    CHECK(layer.outputs[0].from_cache);
    CHECK(!layer.outputs[1].parsed.valid);
    REQUIRE(layer.failures.size() == 1);
    CHECK(layer.point_prediction.phq8 == 12);
    REQUIRE(c1.consolidation.has_value());
    CHECK(c1.consolidation->expert_id == "consolidator");
    CHECK(c1.final_assessment.valid);
    CHECK(c1.final_assessment.phq8 == 12);

    const CaseRecord& c2 = back.cases[1];
    CHECK(!c2.consolidation.has_value());
    CHECK(!c2.final_assessment.valid);
    CHECK(c2.error == "consolidation by 'consolidator' failed");

    // a second trip reproduces the exact bytes
    CHECK(run_manifest_to_jsonl(back) == jsonl);
}

TEST_CASE("run manifest file IO") {
    TmpDir tmp;
    RunManifest m = sample_manifest();
    write_run_manifest(tmp.file("out/run.jsonl"), m);
    RunManifest back = load_run_manifest(tmp.file("out/run.jsonl"));
    CHECK(back.run_id == m.run_id);
    CHECK(back.cases.size() == 2);
    CHECK_THROWS_AS(load_run_manifest(tmp.file("missing.jsonl")), IngestError);
}

TEST_CASE("run manifest parsing is strict") {
    std::string good = run_manifest_to_jsonl(sample_manifest());

    CHECK_THROWS_AS(parse_run_manifest("", "mem"), IngestError);
    CHECK_THROWS_AS(parse_run_manifest("{not json}\n", "mem"), IngestError);
    CHECK_THROWS_AS(parse_run_manifest("{\"record\":\"wat\"}\n", "mem"), IngestError);
    CHECK_THROWS_AS(parse_run_manifest("{\"no_record\":1}\n", "mem"), IngestError);

    // a case record must not precede the header
    size_t header_end = good.find('\n');
    std::string cases_only = good.substr(header_end + 1);
    CHECK_THROWS_WITH_AS(parse_run_manifest(cases_only, "mem"),
                         doctest::Contains("before header"), IngestError);

    std::string doubled = good.substr(0, header_end + 1) + good;
    CHECK_THROWS_WITH_AS(parse_run_manifest(doubled, "mem"),
                         doctest::Contains("duplicate header"), IngestError);

    std::string future = good;
    size_t pos = future.find("\"schema_version\":1");
    REQUIRE(pos != std::string::npos);
    future.replace(pos, 18, "\"schema_version\":2");
    CHECK_THROWS_WITH_AS(parse_run_manifest(future, "mem"),
                         doctest::Contains("unsupported schema_version"), IngestError);

    // header case count must match the records that follow
    size_t second_nl = good.find('\n', header_end + 1);
    std::string missing_case = good.substr(0, second_nl + 1);
    CHECK_THROWS_WITH_AS(parse_run_manifest(missing_case, "mem"),
                         doctest::Contains("declares"), IngestError);

    // errors carry the source name and line number
    std::string bad_line = good.substr(0, header_end + 1) + "garbage\n";
    try {
        parse_run_manifest(bad_line, "run.jsonl");
        FAIL("expected IngestError");
    } catch (const IngestError& e) {
        CHECK(std::string(e.what()).find("run.jsonl:2") != std::string::npos);
    }

    std::string no_assessment =
        good.substr(0, header_end + 1) +
        "{\"record\":\"case\",\"case_id\":\"c1\"}\n{\"record\":\"case\",\"case_id\":\"c2\","
        "\"final_assessment\":{\"valid\":false}}\n";
    CHECK_THROWS_WITH_AS(parse_run_manifest(no_assessment, "mem"),
                         doctest::Contains("final_assessment"), IngestError);
}

TEST_CASE("manifest stable text ignores volatile fields only") {
    RunManifest a = sample_manifest();
    RunManifest b = sample_manifest();
    b.started = "2031-01-01T00:00:00Z";
    b.finished = "2031-01-01T00:09:00Z";
    b.cases[0].final_layers[0].outputs[0].latency_ms = 9001;
    b.cases[0].final_layers[0].outputs[0].from_cache = false;

    std::string ja = run_manifest_to_jsonl(a);
    std::string jb = run_manifest_to_jsonl(b);
    CHECK(ja != jb);
    CHECK(manifest_stable_text(ja) == manifest_stable_text(jb));
    CHECK(manifest_stable_text(ja).find("volatile") == std::string::npos);
    CHECK(manifest_stable_text(ja).find("latency_ms") == std::string::npos);

    RunManifest c = sample_manifest();
    c.cases[0].final_layers[0].outputs[0].raw_text = "PHQ-8 score: 13";
    CHECK(manifest_stable_text(run_manifest_to_jsonl(c)) != manifest_stable_text(ja));
}

namespace {

// A minimal well-formed config document; tests mutate copies of it.
std::string base_config_json() {
    return R"({
      "task": "phq8_regression",
      "layers": [
        {
          "template_text": "{TASK_INSTRUCTIONS}\n{INPUT}",
          "experts": [
            {
              "expert_id": "a1",
              "role": "single_step",
              "backend": "scripted_mock",
              "model_name": "mock-a",
              "script": {"default": {"response": "PHQ-8 score: 4"}}
            }
          ]
        }
      ],
      "final": {
        "template_text": "{OPINIONS}",
        "expert": {
          "expert_id": "fin",
          "role": "reliable",
          "backend": "scripted_mock",
          "model_name": "mock-f",
          "script": {"default": {"response": "PHQ-8 score: 4"}}
        }
      }
    })";
}

} // namespace

TEST_CASE("config digest canonicalizes whitespace and key order") {
    std::string pretty = base_config_json();
    std::string reordered = R"({"final":{"expert":{"backend":"scripted_mock","expert_id":"fin",)"
                            R"("model_name":"mock-f","role":"reliable",)"
                            R"("script":{"default":{"response":"PHQ-8 score: 4"}}},)"
                            R"("template_text":"{OPINIONS}"},)"
                            R"("layers":[{"experts":[{"backend":"scripted_mock",)"
                            R"("expert_id":"a1","model_name":"mock-a","role":"single_step",)"
                            R"("script":{"default":{"response":"PHQ-8 score: 4"}}}],)"
                            R"("template_text":"{TASK_INSTRUCTIONS}\n{INPUT}"}],)"
                            R"("task":"phq8_regression"})";
    CHECK(config_canonical_digest(pretty) == config_canonical_digest(reordered));
    CHECK(config_canonical_digest(pretty) == config_canonical_digest(base_config_json() + " "));
    CHECK_THROWS_AS(config_canonical_digest("{"), ConfigError);

    PipelineConfig cfg = parse_pipeline_config(pretty, ".", "cfg.json");
    CHECK(cfg.config_digest == config_canonical_digest(pretty));
}

TEST_CASE("config parsing fills defaults and reads every block") {
    std::string text = R"({
      "task": "binary",
      "layers": [
        {
          "template_text": "{TASK_INSTRUCTIONS}\n{INPUT}",
          "experts": [
            {
              "expert_id": "a1",
              "role": "single_step",
              "backend": "scripted_mock",
              "model_name": "mock-a",
              "sampling": {"temperature": 0.2, "top_p": 0.9, "seed": 7},
              "max_output_tokens": 128,
              "script": {
                "default": {"fail": true},
                "entries": [
                  {"layer_index": 1, "input_digest": "abc", "response": "Classification: 1"},
                  {"layer_index": 1, "input_digest": "def", "fail": true}
                ]
              }
            }
          ]
        }
      ],
      "final": {
        "template_text": "{OPINIONS}",
        "expert": {
          "expert_id": "fin",
          "role": "reliable",
          "backend": "scripted_mock",
          "model_name": "mock-f",
          "script": {"default": {"response": "Classification: 1"}}
        }
      },
      "stopping": {"metric": "f1", "delta": 0.02, "calibration_ids": ["c1", "c2"]},
      "include_original_input_in_refinement": true,
      "parallelism": 2,
      "retry": {"budget": 1, "base_delay_ms": 5, "max_delay_ms": 10, "jitter": false},
      "rules": {"labeled_patterns": ["Verdict", "LABEL"], "fallback_enabled": false}
    })";

    PipelineConfig cfg = parse_pipeline_config(text, ".", "cfg.json");
    CHECK(cfg.task == Task::binary);
    REQUIRE(cfg.layers.size() == 1);
    const ExpertSpec& a1 = cfg.layers[0].experts.at(0);
    CHECK(a1.expert_id == "a1");
    CHECK(a1.role == ExpertRole::single_step);
    CHECK(a1.backend == BackendKind::scripted_mock);
    CHECK(a1.sampling.temperature == doctest::Approx(0.2));
    CHECK(a1.sampling.top_p == doctest::Approx(0.9));
    CHECK(a1.sampling.seed == 7);
    CHECK(a1.max_output_tokens == 128);
    REQUIRE(a1.script.default_entry.has_value());
    CHECK(a1.script.default_entry->fail);
    REQUIRE(a1.script.entries.size() == 2);
    CHECK(a1.script.entries.at({1, "abc"}).response == "Classification: 1");
    CHECK(a1.script.entries.at({1, "def"}).fail);

    CHECK(cfg.final_expert.expert_id == "fin");
    REQUIRE(cfg.stopping.has_value());
    CHECK(cfg.stopping->metric == StoppingMetric::f1);
    CHECK(cfg.stopping->delta == doctest::Approx(0.02));
    CHECK(cfg.stopping->calibration_ids == std::vector<std::string>{"c1", "c2"});
    CHECK(cfg.include_original_input_in_refinement);
    CHECK(cfg.parallelism == 2);
    CHECK(cfg.retry.budget == 1);
    CHECK(cfg.retry.base_delay_ms == 5);
    CHECK(cfg.retry.max_delay_ms == 10);
    CHECK(!cfg.retry.jitter);

    REQUIRE(cfg.rules.has_value());
    CHECK(cfg.rules->task == Task::binary);
    // patterns are matched case-insensitively, stored lowercased
    CHECK(cfg.rules->labeled_patterns ==
          std::vector<std::string>{"verdict", "label"});
    CHECK(!cfg.rules->fallback_enabled);
}

TEST_CASE("config errors carry the offending field path") {
    auto expect_error = [](const std::string& text, const char* needle) {
        try {
            parse_pipeline_config(text, ".", "cfg.json");
            FAIL_CHECK("expected ConfigError for: " << needle);
        } catch (const ConfigError& e) {
            std::string msg = e.what();
            CHECK(msg.find("cfg.json") != std::string::npos);
            if (msg.find(needle) == std::string::npos) {
                FAIL_CHECK("message lacks '" << needle << "': " << msg);
            }
        }
    };

    expect_error("{", "invalid JSON");
    expect_error("[]", "(root)");

    std::string unknown_key = base_config_json();
    unknown_key.insert(unknown_key.rfind('}'), ", \"extra\": 1");
    expect_error(unknown_key, "unknown field 'extra'");

    std::string no_task = base_config_json();
    const std::string task_line = "\"task\": \"phq8_regression\",";
    size_t task_pos = no_task.find(task_line);
    REQUIRE(task_pos != std::string::npos);
    no_task.erase(task_pos, task_line.size());
    expect_error(no_task, "missing field 'task'");

    std::string bad_task = base_config_json();
    bad_task.replace(bad_task.find("phq8"), 4, "poem");
    expect_error(bad_task, "task");

    std::string both_templates = base_config_json();
    both_templates.insert(both_templates.find("\"template_text\": \"{OPINIONS}\""),
                          "\"template\": \"t\", ");
    expect_error(both_templates, "exactly one of 'template' or 'template_text'");

    std::string bad_expert_field = base_config_json();
    bad_expert_field.insert(bad_expert_field.find("\"expert_id\": \"a1\""),
                            "\"nickname\": \"al\", ");
    expect_error(bad_expert_field, "layers[0].experts[0]");

    std::string http_no_endpoint = R"({
      "task": "phq8_regression",
      "layers": [{"template_text": "{INPUT}", "experts": [{
        "expert_id": "a", "role": "single_step", "backend": "http_chat",
        "model_name": "m"}]}],
      "final": {"template_text": "{OPINIONS}", "expert": {
        "expert_id": "f", "role": "reliable", "backend": "scripted_mock",
        "model_name": "m", "script": {"default": {"response": "x"}}}}
    })";
    expect_error(http_no_endpoint, "endpoint_url");

    std::string script_on_http = R"({
      "task": "phq8_regression",
      "layers": [{"template_text": "{INPUT}", "experts": [{
        "expert_id": "a", "role": "single_step", "backend": "http_chat",
        "model_name": "m", "endpoint_url": "http://127.0.0.1:1/v1",
        "script": {"default": {"response": "x"}}}]}],
      "final": {"template_text": "{OPINIONS}", "expert": {
        "expert_id": "f", "role": "reliable", "backend": "scripted_mock",
        "model_name": "m", "script": {"default": {"response": "x"}}}}
    })";
    expect_error(script_on_http, "only scripted_mock experts take a script");

    std::string empty_entry = base_config_json();
    empty_entry.replace(empty_entry.find("{\"response\": \"PHQ-8 score: 4\"}"), 30, "{}");
    expect_error(empty_entry, "needs a 'response' or 'fail: true'");

    std::string no_delta = base_config_json();
    no_delta.insert(no_delta.rfind('}'),
                    ", \"stopping\": {\"calibration_ids\": [\"c1\"]}");
    expect_error(no_delta, "stopping.delta");

    std::string bad_metric = base_config_json();
    bad_metric.insert(bad_metric.rfind('}'),
                      ", \"stopping\": {\"metric\": \"auc\", \"delta\": 0.1, "
                      "\"calibration_ids\": [\"c1\"]}");
    expect_error(bad_metric, "stopping.metric");

    // semantic validation failures surface the same way
    std::string dup_ids = base_config_json();
    dup_ids.replace(dup_ids.find("\"expert_id\": \"fin\""), 18, "\"expert_id\": \"a1\"");
    expect_error(dup_ids, "duplicate expert_id");

    std::string input_in_final = base_config_json();
    input_in_final.replace(input_in_final.find("\"template_text\": \"{OPINIONS}\""), 29,
                           "\"template_text\": \"{INPUT} {OPINIONS}\"");
    expect_error(input_in_final, "{INPUT}");
}

TEST_CASE("config templates resolve against the config directory") {
    TmpDir tmp;
    tmp.write("templates/layer1.txt", "{TASK_INSTRUCTIONS}\n\nInterview:\n{INPUT}\n");
    tmp.write("templates/final.txt", "Consolidate.\n{OPINIONS}\n");
    tmp.write("run.json", R"({
      "task": "phq8_regression",
      "templates": {
        "layer1": "templates/layer1.txt",
        "final": "templates/final.txt"
      },
      "layers": [
        {"template": "layer1", "experts": [{
          "expert_id": "a1", "role": "single_step", "backend": "scripted_mock",
          "model_name": "mock-a", "script": {"default": {"response": "PHQ-8 score: 4"}}}]}
      ],
      "final": {"template": "final", "expert": {
        "expert_id": "fin", "role": "reliable", "backend": "scripted_mock",
        "model_name": "mock-f", "script": {"default": {"response": "PHQ-8 score: 4"}}}}
    })");

    PipelineConfig cfg = load_pipeline_config(tmp.file("run.json"));
    CHECK(cfg.layers[0].template_id == "layer1");
    CHECK(cfg.layers[0].template_text.find("Interview:") != std::string::npos);
    CHECK(cfg.final_template_id == "final");
    CHECK(cfg.final_template_text.find("Consolidate.") != std::string::npos);

    // template text feeds prompts, not the digest: editing the file leaves
    // the digest alone because the document only names the path
    std::string digest_before = cfg.config_digest;
    tmp.write("templates/layer1.txt", "{TASK_INSTRUCTIONS}\n\nEDITED:\n{INPUT}\n");
    PipelineConfig cfg2 = load_pipeline_config(tmp.file("run.json"));
    CHECK(cfg2.config_digest == digest_before);
    CHECK(cfg2.layers[0].template_text.find("EDITED") != std::string::npos);

    // unknown template ids and unreadable files are config errors
    tmp.write("bad_id.json", R"({
      "task": "phq8_regression",
      "layers": [{"template": "ghost", "experts": [{
        "expert_id": "a1", "role": "single_step", "backend": "scripted_mock",
        "model_name": "mock-a", "script": {"default": {"response": "x"}}}]}],
      "final": {"template_text": "{OPINIONS}", "expert": {
        "expert_id": "fin", "role": "reliable", "backend": "scripted_mock",
        "model_name": "mock-f", "script": {"default": {"response": "x"}}}}
    })");
    CHECK_THROWS_WITH_AS(load_pipeline_config(tmp.file("bad_id.json")),
                         doctest::Contains("unknown template id"), ConfigError);

    tmp.write("bad_file.json", R"({
      "task": "phq8_regression",
      "templates": {"layer1": "missing/nowhere.txt"},
      "layers": [{"template": "layer1", "experts": [{
        "expert_id": "a1", "role": "single_step", "backend": "scripted_mock",
        "model_name": "mock-a", "script": {"default": {"response": "x"}}}]}],
      "final": {"template_text": "{OPINIONS}", "expert": {
        "expert_id": "fin", "role": "reliable", "backend": "scripted_mock",
        "model_name": "mock-f", "script": {"default": {"response": "x"}}}}
    })");
    CHECK_THROWS_WITH_AS(load_pipeline_config(tmp.file("bad_file.json")),
                         doctest::Contains("templates.layer1"), ConfigError);

    CHECK_THROWS_AS(load_pipeline_config(tmp.file("absent.json")), IngestError);
}
