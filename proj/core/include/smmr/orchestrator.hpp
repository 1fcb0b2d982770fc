#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "smmr/experts.hpp"
#include "smmr/ingestion.hpp"
#include "smmr/parsers.hpp"
#include "smmr/types.hpp"

namespace smmr {

struct LayerAggregate {
    int layer_index = 1;
    std::vector<ExpertOutput> outputs; // ordered by expert_id
};

enum class StoppingMetric { accuracy, f1, neg_mae };

std::string_view to_string(StoppingMetric metric);
StoppingMetric stopping_metric_from_string(std::string_view s);

struct StoppingPolicy {
    StoppingMetric metric = StoppingMetric::accuracy;
    double delta = 0.0;
    std::vector<std::string> calibration_ids;

    void validate() const;
};

struct LayerSpec {
    std::string template_id;
    std::string template_text;
    std::vector<ExpertSpec> experts;
};

struct PipelineConfig {
    Task task = Task::phq8_regression;
    std::vector<LayerSpec> layers;
    std::string final_template_id;
    std::string final_template_text;
    ExpertSpec final_expert;
    std::optional<StoppingPolicy> stopping;
    bool include_original_input_in_refinement = false;
    int parallelism = 4;
    RetryPolicy retry;
    std::optional<ParseRules> rules;
    std::string config_digest; // digest of the canonical config document

    const ParseRules* active_rules() const { return rules ? &*rules : nullptr; }

    void validate() const;
};

// Instruction text substituted for {TASK_INSTRUCTIONS}; states the exact
// answer line each parser expects.
std::string_view task_instructions(Task task);

// Substitutes {INPUT}, {OPINIONS}, {TASK_INSTRUCTIONS}. A placeholder whose
// value is absent, or any unknown {LIKE_THIS} token, raises TemplateError.
// Brace pairs that are not upper-case identifiers pass through verbatim.
std::string render_prompt(const std::string& template_text,
                          const std::optional<std::string>& input_text,
                          const std::optional<std::string>& opinions, Task task);

// One block per output, in aggregate order:
// "Expert <n> opinion:\n<raw_text>", blocks separated by a blank line.
std::string serialize_aggregate(const LayerAggregate& aggregate);

struct PipelineEnv {
    const ExpertClient* client = nullptr;
    Task task = Task::phq8_regression;
    const ParseRules* rules = nullptr;
};

// A backend failure becomes an invalid output for that expert; the layer
// proceeds as long as one expert answered, otherwise AllExpertsFailed.
// `failures` collects human-readable failure notes for the audit trail.
LayerAggregate run_layer1(const PipelineEnv& env, const std::string& input_text,
                          const std::vector<ExpertSpec>& experts,
                          const std::string& template_text,
                          std::vector<std::string>* failures = nullptr);

LayerAggregate run_refinement_layer(const PipelineEnv& env, int k, const LayerAggregate& previous,
                                    const std::vector<ExpertSpec>& experts,
                                    const std::string& template_text,
                                    const std::optional<std::string>& input_text,
                                    std::vector<std::string>* failures = nullptr);

// Consolidation always runs, even over a singleton aggregate. A backend
// failure here raises FinalLayerFailed.
ExpertOutput run_final_layer(const PipelineEnv& env, const LayerAggregate& previous,
                             const ExpertSpec& reliable, const std::string& template_text,
                             const std::optional<std::string>& input_text);

// Collapses one layer's outputs to a single assessment for the stopping
// metric: lower median for PHQ-8 scores, majority vote with lower-code
// tie-break for categorical labels, most frequent normalized set (ties to
// the lexicographically smaller serialization) for disorder lists.
ParsedAssessment layer_point_prediction(const LayerAggregate& aggregate, Task task);

// Scans k = 2..N and stops at the first k whose gain over k-1 is below
// delta; returns the 1-based argmax over the evaluated prefix, first index
// winning ties.
int apply_dynamic_stopping(const std::vector<double>& per_layer_metric, double delta);

struct LayerCalibrationMetric {
    int layer_index = 1;
    std::optional<double> metric_value; // empty when no calibration case scored
    int n_scored = 0;
};

struct CaseLayerRecord {
    int layer_index = 1;
    std::vector<ExpertOutput> outputs;
    ParsedAssessment point_prediction;
    std::vector<std::string> failures;
};

struct CaseRecord {
    std::string case_id;
    std::vector<CaseLayerRecord> calibration_layers;
    std::vector<CaseLayerRecord> final_layers;
    std::optional<ExpertOutput> consolidation;
    ParsedAssessment final_assessment;
    std::string error; // empty when the case completed cleanly
};

struct RunManifest {
    int schema_version = 1;
    std::string run_id;
    std::string config_digest;
    std::string dataset_digest;
    Task task = Task::phq8_regression;
    int selected_depth = 1;
    std::vector<LayerCalibrationMetric> calibration_metrics;
    std::string started;  // volatile
    std::string finished; // volatile
    std::vector<CaseRecord> cases;
};

// Digest over (id, input_text) pairs in dataset order.
std::string dataset_digest(const Dataset& dataset);

// Executes calibration (when stopping is configured), selects the depth,
// then runs every case at that depth with final consolidation. Cases run
// concurrently up to config.parallelism; manifest order follows the
// dataset. AllExpertsFailed during calibration aborts; per-case failures in
// the final phase are recorded on the case instead.
RunManifest run_pipeline(const Dataset& dataset, const PipelineConfig& config,
                         const ExpertClient& client);

} // namespace smmr
