#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>
#include <string>
#include <vector>

#include "smmr/digest.hpp"
#include "smmr/errors.hpp"
#include "smmr/orchestrator.hpp"
#include "support/oracles.hpp"

using namespace smmr;
namespace tt = smmr::testing;

namespace {

ExpertOutput raw_output(const std::string& id, const std::string& text, Task task) {
    ExpertOutput o;
    o.expert_id = id;
    o.raw_text = text;
    o.parsed = parse_assessment(text, task);
    return o;
}

ExpertSpec mock_expert(const std::string& id, ExpertRole role) {
    ExpertSpec e;
    e.expert_id = id;
    e.role = role;
    e.backend = BackendKind::scripted_mock;
    e.model_name = "mock-" + id;
    return e;
}

// Registers `response` for the prompt this expert will see at the given
// layer; the digest is derived the same way the client does it.
void script(ExpertSpec& e, int layer, const std::string& prompt, const std::string& response,
            bool fail = false) {
    e.script.entries[{layer, sha256_hex(prompt)}] = MockEntry{response, fail};
}

} // namespace

TEST_CASE("serialize_aggregate formats opinion blocks") {
    LayerAggregate agg;
    agg.layer_index = 1;
    agg.outputs = {raw_output("a", "A", Task::binary), raw_output("b", "B", Task::binary)};
    CHECK(serialize_aggregate(agg) == "Expert 1 opinion:\nA\n\nExpert 2 opinion:\nB");

    LayerAggregate single;
    single.outputs = {raw_output("x", "X", Task::binary)};
    CHECK(serialize_aggregate(single) == "Expert 1 opinion:\nX");

    LayerAggregate empty;
    CHECK_THROWS_AS(serialize_aggregate(empty), DomainError);
}

TEST_CASE("render_prompt substitutes placeholders") {
    std::string tmpl = "{TASK_INSTRUCTIONS}\n\nInput:\n{INPUT}\n\nOpinions:\n{OPINIONS}";
    std::string rendered =
        render_prompt(tmpl, std::string("the interview"), std::string("the opinions"),
                      Task::binary);
    CHECK(rendered.find("the interview") != std::string::npos);
    CHECK(rendered.find("the opinions") != std::string::npos);
    CHECK(rendered.find(std::string(task_instructions(Task::binary))) != std::string::npos);
    CHECK(rendered.find('{') == std::string::npos);

    // a placeholder with no value to substitute is an error
    CHECK_THROWS_AS(render_prompt("{INPUT}", std::nullopt, std::nullopt, Task::binary),
                    TemplateError);
    CHECK_THROWS_AS(render_prompt("x {OPINIONS}", std::string("i"), std::nullopt, Task::binary),
                    TemplateError);

    // unknown upper-case tokens are schema errors, lower-case braces are text
    CHECK_THROWS_AS(render_prompt("{UNKNOWN_FIELD}", std::string("i"), std::nullopt,
                                  Task::binary),
                    TemplateError);
    CHECK(render_prompt("json like {\"k\": 1} and {not upper}", std::nullopt, std::nullopt,
                        Task::binary) == "json like {\"k\": 1} and {not upper}");

    // a template that renders to nothing is always a mistake
    CHECK_THROWS_AS(render_prompt("", std::nullopt, std::nullopt, Task::binary), TemplateError);
}

TEST_CASE("task instructions name the exact answer lines") {
    CHECK(std::string(task_instructions(Task::phq8_regression)).find("PHQ-8 score:") !=
          std::string::npos);
    CHECK(std::string(task_instructions(Task::binary)).find("Classification:") !=
          std::string::npos);
    std::string concern(task_instructions(Task::concern));
    CHECK(concern.find("Mental concern:") != std::string::npos);
    CHECK(concern.find("Disorders:") != std::string::npos);
    CHECK(std::string(task_instructions(Task::disorders)).find("Disorders:") !=
          std::string::npos);
}

TEST_CASE("layer point prediction: lower median for scores") {
    LayerAggregate agg;
    agg.outputs = {raw_output("a", "PHQ-8 score: 12", Task::phq8_regression),
                   raw_output("b", "PHQ-8 score: 7", Task::phq8_regression),
                   raw_output("c", "PHQ-8 score: 9", Task::phq8_regression)};
    ParsedAssessment p = layer_point_prediction(agg, Task::phq8_regression);
    CHECK(p.valid);
    CHECK(p.phq8 == 9);
    CHECK(p.binary == 0);

    // even count takes the lower median
    agg.outputs.pop_back();
    CHECK(layer_point_prediction(agg, Task::phq8_regression).phq8 == 7);

    // invalid outputs do not vote
    agg.outputs.push_back(raw_output("d", "no score here", Task::phq8_regression));
    CHECK(layer_point_prediction(agg, Task::phq8_regression).phq8 == 7);

    LayerAggregate hopeless;
    hopeless.outputs = {raw_output("a", "nothing", Task::phq8_regression)};
    CHECK(!layer_point_prediction(hopeless, Task::phq8_regression).valid);

    LayerAggregate empty;
    CHECK_THROWS_AS(layer_point_prediction(empty, Task::phq8_regression), DomainError);
}

TEST_CASE("layer point prediction: majority vote for labels") {
    LayerAggregate agg;
    agg.outputs = {raw_output("a", "Classification: 1", Task::binary),
                   raw_output("b", "Classification: 1", Task::binary),
                   raw_output("c", "Classification: 0", Task::binary)};
    CHECK(layer_point_prediction(agg, Task::binary).binary == 1);

    agg.outputs.pop_back();
    agg.outputs[1] = raw_output("b", "Classification: 0", Task::binary);
    // 1 vs 1: tie resolves to the lower code
    CHECK(layer_point_prediction(agg, Task::binary).binary == 0);
}

TEST_CASE("layer point prediction: concern votes with lowest-code ties") {
    LayerAggregate agg;
    agg.outputs = {raw_output("a", "Mental concern: 2", Task::concern),
                   raw_output("b", "Mental concern: 2", Task::concern),
                   raw_output("c", "Mental concern: 1", Task::concern)};
    ParsedAssessment p = layer_point_prediction(agg, Task::concern);
    CHECK(p.concern == 2);
    CHECK(!p.binary.has_value()); // indeterminate has no binary reading

    LayerAggregate tie;
    tie.outputs = {raw_output("a", "Mental concern: 1", Task::concern),
                   raw_output("b", "Mental concern: 2", Task::concern)};
    ParsedAssessment tied = layer_point_prediction(tie, Task::concern);
    CHECK(tied.concern == 1);
    CHECK(tied.binary == 1);
}

TEST_CASE("layer point prediction: most frequent normalized disorder set") {
    LayerAggregate agg;
    agg.outputs = {
        raw_output("a", "Disorders: Anxiety, Depression", Task::disorders),
        raw_output("b", "Disorders: depression, anxiety", Task::disorders),
        raw_output("c", "Disorders: OCD", Task::disorders),
    };
    ParsedAssessment p = layer_point_prediction(agg, Task::disorders);
    REQUIRE(p.disorders.has_value());
    CHECK(*p.disorders == std::vector<std::string>{"anxiety", "depression"});

    LayerAggregate tie;
    tie.outputs = {raw_output("a", "Disorders: insomnia", Task::disorders),
                   raw_output("b", "Disorders: adhd", Task::disorders)};
    ParsedAssessment tied = layer_point_prediction(tie, Task::disorders);
    REQUIRE(tied.disorders.has_value());
    CHECK(*tied.disorders == std::vector<std::string>{"adhd"});
}

TEST_CASE("dynamic stopping worked examples") {
    CHECK(apply_dynamic_stopping({0.55, 0.76, 0.75}, 0.05) == 2);
    CHECK(apply_dynamic_stopping({0.5}, 0.0) == 1);
    CHECK(apply_dynamic_stopping({0.5, 0.5}, 0.0) == 1); // zero gain meets delta 0
    CHECK(apply_dynamic_stopping({0.5, 0.49}, 0.0) == 1);
    CHECK(apply_dynamic_stopping({0.3, 0.5, 0.8}, 0.1) == 3);
    CHECK_THROWS_AS(apply_dynamic_stopping({}, 0.1), DomainError);
    CHECK_THROWS_AS(apply_dynamic_stopping({0.5}, -0.1), DomainError);
}

TEST_CASE("dynamic stopping matches the brute-force reference") {
    std::mt19937 gen(20240101);
    std::uniform_int_distribution<int> len_dist(1, 6);
    std::uniform_int_distribution<int> grid(0, 100);
    std::uniform_int_distribution<int> delta_grid(0, 20);

    int checked = 0;
    for (int iter = 0; iter < 12000; ++iter) {
        int n = len_dist(gen);
        std::vector<double> metric(n);
        for (int i = 0; i < n; ++i) metric[i] = grid(gen) / 100.0;
        double delta = delta_grid(gen) / 100.0;
        CHECK(apply_dynamic_stopping(metric, delta) == tt::oracle_stopping(metric, delta));
        ++checked;
    }

    // dense tie coverage: tiny alphabet makes equal values and equal gains
    // the norm rather than the exception
    const double vals[] = {0.50, 0.51, 0.52};
    for (double a : vals) {
        for (double b : vals) {
            for (double c : vals) {
                for (double d : vals) {
                    std::vector<double> metric{a, b, c, d};
                    for (double delta : {0.0, 0.01, 0.02}) {
                        CHECK(apply_dynamic_stopping(metric, delta) ==
                              tt::oracle_stopping(metric, delta));
                        ++checked;
                    }
                }
            }
        }
    }
    CHECK(checked >= 10000);
}

TEST_CASE("run_layer1 tolerates partial failure and reports total failure") {
    Task task = Task::phq8_regression;
    std::string tmpl = "{TASK_INSTRUCTIONS}\n{INPUT}";
    std::string input = "Ellie: how are you ./";
    std::string prompt = render_prompt(tmpl, input, std::nullopt, task);

    ExpertSpec good = mock_expert("good", ExpertRole::single_step);
    script(good, 1, prompt, "PHQ-8 score: 4");
    ExpertSpec bad = mock_expert("bad", ExpertRole::single_step);
    script(bad, 1, prompt, "", true);

    ExpertClient client;
    PipelineEnv env{&client, task, nullptr};

    std::vector<std::string> failures;
    LayerAggregate agg = run_layer1(env, input, {good, bad}, tmpl, &failures);
    CHECK(agg.layer_index == 1);
    REQUIRE(agg.outputs.size() == 2);
    CHECK(agg.outputs[0].expert_id == "bad"); // ordered by expert_id
    CHECK(!agg.outputs[0].parsed.valid);
    CHECK(agg.outputs[0].raw_text.empty());
    CHECK(agg.outputs[1].parsed.phq8 == 4);
    REQUIRE(failures.size() == 1);
    CHECK(failures[0].find("bad") != std::string::npos);

    ExpertSpec bad2 = mock_expert("bad2", ExpertRole::single_step);
    script(bad2, 1, prompt, "", true);
    CHECK_THROWS_AS(run_layer1(env, input, {bad, bad2}, tmpl, nullptr), AllExpertsFailed);
}

TEST_CASE("refinement layers check their position") {
    ExpertClient client;
    PipelineEnv env{&client, Task::binary, nullptr};
    LayerAggregate previous;
    previous.layer_index = 1;
    previous.outputs = {raw_output("a", "Classification: 1", Task::binary)};

    ExpertSpec e = mock_expert("r", ExpertRole::long_context);
    CHECK_THROWS_AS(
        run_refinement_layer(env, 1, previous, {e}, "{OPINIONS}", std::nullopt, nullptr),
        DomainError);
    CHECK_THROWS_AS(
        run_refinement_layer(env, 3, previous, {e}, "{OPINIONS}", std::nullopt, nullptr),
        DomainError);
}

TEST_CASE("final layer demands a reliable expert and wraps failures") {
    Task task = Task::binary;
    ExpertClient client;
    PipelineEnv env{&client, task, nullptr};
    LayerAggregate previous;
    previous.layer_index = 1;
    previous.outputs = {raw_output("a", "Classification: 1", task)};

    ExpertSpec not_reliable = mock_expert("nr", ExpertRole::single_step);
    CHECK_THROWS_AS(run_final_layer(env, previous, not_reliable, "{OPINIONS}", std::nullopt),
                    DomainError);

    std::string prompt =
        render_prompt("{OPINIONS}", std::nullopt, serialize_aggregate(previous), task);
    ExpertSpec flaky = mock_expert("rel", ExpertRole::reliable);
    script(flaky, 2, prompt, "", true);
    CHECK_THROWS_AS(run_final_layer(env, previous, flaky, "{OPINIONS}", std::nullopt),
                    FinalLayerFailed);

    ExpertSpec reliable = mock_expert("rel2", ExpertRole::reliable);
    script(reliable, 2, prompt, "Classification: 1");
    ExpertOutput out = run_final_layer(env, previous, reliable, "{OPINIONS}", std::nullopt);
    CHECK(out.layer_index == 2);
    CHECK(out.parsed.binary == 1);
}

TEST_CASE("pipeline config validation") {
    PipelineConfig cfg;
    cfg.task = Task::binary;
    cfg.final_template_text = "{OPINIONS}";
    cfg.final_expert = mock_expert("final", ExpertRole::reliable);

    LayerSpec layer;
    layer.template_text = "{TASK_INSTRUCTIONS}\n{INPUT}";
    layer.experts = {mock_expert("a", ExpertRole::single_step)};
    cfg.layers = {layer};
    CHECK_NOTHROW(cfg.validate());

    // expert ids must be unique across the whole config
    PipelineConfig dup = cfg;
    dup.layers[0].experts.push_back(mock_expert("a", ExpertRole::single_step));
    CHECK_THROWS_AS(dup.validate(), ConfigError);

    PipelineConfig dup_final = cfg;
    dup_final.final_expert.expert_id = "a";
    CHECK_THROWS_AS(dup_final.validate(), ConfigError);

    // only the consolidation expert may carry the reliable role
    PipelineConfig misplaced = cfg;
    misplaced.layers[0].experts[0].role = ExpertRole::reliable;
    CHECK_THROWS_AS(misplaced.validate(), ConfigError);

    PipelineConfig weak_final = cfg;
    weak_final.final_expert.role = ExpertRole::long_context;
    CHECK_THROWS_AS(weak_final.validate(), ConfigError);

    // {INPUT} outside layer 1 needs the opt-in flag
    PipelineConfig input_final = cfg;
    input_final.final_template_text = "{INPUT}\n{OPINIONS}";
    CHECK_THROWS_AS(input_final.validate(), ConfigError);
    input_final.include_original_input_in_refinement = true;
    CHECK_NOTHROW(input_final.validate());

    PipelineConfig no_layers = cfg;
    no_layers.layers.clear();
    CHECK_THROWS_AS(no_layers.validate(), ConfigError);

    PipelineConfig bad_parallelism = cfg;
    bad_parallelism.parallelism = 0;
    CHECK_THROWS_AS(bad_parallelism.validate(), ConfigError);

    // stopping metric must make sense for the task
    PipelineConfig stop_cfg = cfg;
    StoppingPolicy p;
    p.metric = StoppingMetric::neg_mae;
    p.delta = 0.05;
    p.calibration_ids = {"c1"};
    stop_cfg.stopping = p;
    CHECK_THROWS_AS(stop_cfg.validate(), ConfigError); // neg_mae needs score outputs

    stop_cfg.task = Task::phq8_regression;
    CHECK_NOTHROW(stop_cfg.validate());

    PipelineConfig f1_disorders = cfg;
    f1_disorders.task = Task::disorders;
    p.metric = StoppingMetric::f1;
    f1_disorders.stopping = p;
    CHECK_THROWS_AS(f1_disorders.validate(), ConfigError);
}

TEST_CASE("stopping policy validation and metric names") {
    StoppingPolicy p;
    p.delta = 0.05;
    p.calibration_ids = {"c1", "c2"};
    CHECK_NOTHROW(p.validate());

    p.delta = -0.01;
    CHECK_THROWS_AS(p.validate(), DomainError);
    p.delta = 0.05;

    p.calibration_ids.clear();
    CHECK_THROWS_AS(p.validate(), DomainError);

    p.calibration_ids = {"c1", "c1"};
    CHECK_THROWS_AS(p.validate(), DomainError);

    p.calibration_ids = {""};
    CHECK_THROWS_AS(p.validate(), DomainError);

    for (StoppingMetric m :
         {StoppingMetric::accuracy, StoppingMetric::f1, StoppingMetric::neg_mae}) {
        CHECK(stopping_metric_from_string(to_string(m)) == m);
    }
    CHECK_THROWS_AS(stopping_metric_from_string("auc"), DomainError);
}

TEST_CASE("run_pipeline executes calibration, stopping, and consolidation") {
    Task task = Task::phq8_regression;
    std::string tmpl1 = "{TASK_INSTRUCTIONS}\n\nInterview:\n{INPUT}";
    std::string tmpl2 = "{TASK_INSTRUCTIONS}\n\nPrior opinions:\n{OPINIONS}";
    std::string final_tmpl = "Consolidate into one answer.\n{OPINIONS}";

    Dataset dataset;
    struct Plan {
        std::string id;
        std::string input;
        int truth;
        int wrong1; // expert a1's layer-1 answer
        int wrong2; // expert a2's layer-1 answer
    };
    std::vector<Plan> plans{
        {"c1", "Ellie: how was your week ./", 12, 5, 4},
        {"c2", "Ellie: any trouble sleeping ./", 3, 3, 3},
        {"c3", "Ellie: how is your appetite ./", 18, 20, 16},
    };

    ExpertSpec a1 = mock_expert("a1", ExpertRole::single_step);
    ExpertSpec a2 = mock_expert("a2", ExpertRole::single_step);
    ExpertSpec b1 = mock_expert("b1", ExpertRole::long_context);
    ExpertSpec fin = mock_expert("fin", ExpertRole::reliable);

    auto score_line = [](int v) { return "PHQ-8 score: " + std::to_string(v); };

    for (const Plan& plan : plans) {
        DatasetCase c;
        c.id = plan.id;
        c.input_text = plan.input;
        GroundTruth t;
        t.phq8 = plan.truth;
        c.truth = t;
        dataset.cases.push_back(std::move(c));

        std::string p1 = render_prompt(tmpl1, plan.input, std::nullopt, task);
        script(a1, 1, p1, score_line(plan.wrong1));
        script(a2, 1, p1, score_line(plan.wrong2));

        LayerAggregate agg1;
        agg1.layer_index = 1;
        agg1.outputs = {raw_output("a1", score_line(plan.wrong1), task),
                        raw_output("a2", score_line(plan.wrong2), task)};
        std::string p2 =
            render_prompt(tmpl2, std::nullopt, serialize_aggregate(agg1), task);
        script(b1, 2, p2, score_line(plan.truth));

        LayerAggregate agg2;
        agg2.layer_index = 2;
        agg2.outputs = {raw_output("b1", score_line(plan.truth), task)};
        std::string p3 =
            render_prompt(final_tmpl, std::nullopt, serialize_aggregate(agg2), task);
        script(fin, 3, p3, score_line(plan.truth));
    }

    PipelineConfig cfg;
    cfg.task = task;
    cfg.layers.resize(2);
    cfg.layers[0].template_text = tmpl1;
    cfg.layers[0].experts = {a1, a2};
    cfg.layers[1].template_text = tmpl2;
    cfg.layers[1].experts = {b1};
    cfg.final_template_text = final_tmpl;
    cfg.final_expert = fin;
    cfg.config_digest = "test-digest";
    StoppingPolicy stopping;
    stopping.metric = StoppingMetric::accuracy;
    stopping.delta = 0.05;
    stopping.calibration_ids = {"c1", "c2", "c3"};
    cfg.stopping = stopping;

    ExpertClient client;
    RunManifest m = run_pipeline(dataset, cfg, client);

    CHECK(m.run_id.size() == 12);
    CHECK(m.config_digest == "test-digest");
    CHECK(m.dataset_digest == dataset_digest(dataset));
    CHECK(m.task == task);

    // layer 1 point predictions: c1 -> 4 (wrong side), c2 -> 3, c3 -> 16;
    // binarized accuracy 2/3. layer 2 corrects everything.
    REQUIRE(m.calibration_metrics.size() == 2);
    CHECK(m.calibration_metrics[0].n_scored == 3);
    REQUIRE(m.calibration_metrics[0].metric_value.has_value());
    CHECK(*m.calibration_metrics[0].metric_value == doctest::Approx(2.0 / 3.0));
    REQUIRE(m.calibration_metrics[1].metric_value.has_value());
    CHECK(*m.calibration_metrics[1].metric_value == doctest::Approx(1.0));
    CHECK(m.selected_depth == 2);

    REQUIRE(m.cases.size() == 3);
    for (size_t i = 0; i < m.cases.size(); ++i) {
        const CaseRecord& rec = m.cases[i];
        CHECK(rec.case_id == plans[i].id);
        CHECK(rec.error.empty());
        CHECK(rec.calibration_layers.size() == 2); // every case calibrated here
        REQUIRE(rec.final_layers.size() == 2);
        CHECK(rec.final_layers[0].outputs.size() == 2);
        CHECK(rec.final_layers[1].outputs.size() == 1);
        REQUIRE(rec.consolidation.has_value());
        CHECK(rec.consolidation->expert_id == "fin");
        CHECK(rec.final_assessment.valid);
        CHECK(rec.final_assessment.phq8 == plans[i].truth);
    }
}

TEST_CASE("run_pipeline records per-case consolidation failures") {
    Task task = Task::binary;
    std::string tmpl = "{TASK_INSTRUCTIONS}\n{INPUT}";
    std::string final_tmpl = "{OPINIONS}";
    std::string input = "Participant: feeling alright ./";

    ExpertSpec a = mock_expert("a", ExpertRole::single_step);
    std::string p1 = render_prompt(tmpl, input, std::nullopt, task);
    script(a, 1, p1, "Classification: 0");

    LayerAggregate agg;
    agg.layer_index = 1;
    agg.outputs = {raw_output("a", "Classification: 0", task)};
    std::string p2 = render_prompt(final_tmpl, std::nullopt, serialize_aggregate(agg), task);
    ExpertSpec fin = mock_expert("fin", ExpertRole::reliable);
    script(fin, 2, p2, "", true); // consolidation dies

    PipelineConfig cfg;
    cfg.task = task;
    cfg.layers.resize(1);
    cfg.layers[0].template_text = tmpl;
    cfg.layers[0].experts = {a};
    cfg.final_template_text = final_tmpl;
    cfg.final_expert = fin;

    Dataset dataset;
    dataset.cases.push_back({"c1", input, std::nullopt});

    ExpertClient client;
    RunManifest m = run_pipeline(dataset, cfg, client);
    REQUIRE(m.cases.size() == 1);
    CHECK(!m.cases[0].error.empty());
    CHECK(!m.cases[0].consolidation.has_value());
    CHECK(!m.cases[0].final_assessment.valid);
}

TEST_CASE("run_pipeline aborts when calibration cannot score a layer") {
    Task task = Task::binary;
    std::string tmpl = "{TASK_INSTRUCTIONS}\n{INPUT}";
    ExpertSpec dead = mock_expert("dead", ExpertRole::single_step);
    dead.script.default_entry = MockEntry{"", true}; // fails everywhere

    PipelineConfig cfg;
    cfg.task = task;
    cfg.layers.resize(1);
    cfg.layers[0].template_text = tmpl;
    cfg.layers[0].experts = {dead};
    cfg.final_template_text = "{OPINIONS}";
    cfg.final_expert = mock_expert("fin", ExpertRole::reliable);
    StoppingPolicy stopping;
    stopping.metric = StoppingMetric::accuracy;
    stopping.delta = 0.01;
    stopping.calibration_ids = {"c1"};
    cfg.stopping = stopping;

    Dataset dataset;
    GroundTruth t;
    t.binary = 0;
    dataset.cases.push_back({"c1", "some input", t});

    ExpertClient client;
    CHECK_THROWS_AS(run_pipeline(dataset, cfg, client), AllExpertsFailed);

    // unknown calibration ids and missing truth are caught up front
    PipelineConfig bad_id = cfg;
    bad_id.stopping->calibration_ids = {"ghost"};
    CHECK_THROWS_AS(run_pipeline(dataset, bad_id, client), DomainError);

    Dataset no_truth;
    no_truth.cases.push_back({"c1", "some input", std::nullopt});
    CHECK_THROWS_AS(run_pipeline(no_truth, cfg, client), DomainError);
}
