#include "smmr/orchestrator.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <map>
#include <set>

#include <json.hpp>

#include "smmr/digest.hpp"
#include "smmr/errors.hpp"
#include "smmr/metrics.hpp"
#include "smmr/util.hpp"

namespace smmr {

using nlohmann::json;

namespace {

// Stand-in for an undefined calibration metric; loses every comparison, so
// an unscoreable layer both stops the scan and never wins the argmax.
constexpr double kUndefinedMetric = -1e300;

} // namespace

std::string_view to_string(StoppingMetric metric) {
    switch (metric) {
    case StoppingMetric::accuracy: return "accuracy";
    case StoppingMetric::f1: return "f1";
    case StoppingMetric::neg_mae: return "neg_mae";
    }
    return "accuracy";
}

StoppingMetric stopping_metric_from_string(std::string_view s) {
    if (s == "accuracy") return StoppingMetric::accuracy;
    if (s == "f1") return StoppingMetric::f1;
    if (s == "neg_mae") return StoppingMetric::neg_mae;
    throw DomainError("unknown stopping metric '" + std::string(s) + "'");
}

void StoppingPolicy::validate() const {
    if (delta < 0.0) throw DomainError("StoppingPolicy: delta must be >= 0");
    if (calibration_ids.empty()) {
        throw DomainError("StoppingPolicy: calibration_ids must be non-empty");
    }
    std::set<std::string> seen;
    for (const std::string& id : calibration_ids) {
        if (id.empty()) throw DomainError("StoppingPolicy: empty calibration id");
        if (!seen.insert(id).second) {
            throw DomainError("StoppingPolicy: duplicate calibration id '" + id + "'");
        }
    }
}

namespace {

std::vector<std::string> placeholder_names(const std::string& template_text) {
    std::vector<std::string> names;
    for (size_t i = 0; i < template_text.size(); ++i) {
        if (template_text[i] != '{') continue;
        size_t j = i + 1;
        while (j < template_text.size() &&
               (std::isupper(static_cast<unsigned char>(template_text[j])) ||
                template_text[j] == '_')) {
            ++j;
        }
        if (j > i + 1 && j < template_text.size() && template_text[j] == '}') {
            names.push_back(template_text.substr(i + 1, j - i - 1));
            i = j;
        }
    }
    return names;
}

bool uses_placeholder(const std::string& template_text, const char* name) {
    std::vector<std::string> names = placeholder_names(template_text);
    return std::find(names.begin(), names.end(), name) != names.end();
}

} // namespace

void PipelineConfig::validate() const {
    if (layers.empty()) throw ConfigError("config: at least one layer required");
    if (parallelism < 1) throw ConfigError("config: parallelism must be >= 1");
    retry.validate();

    std::set<std::string> ids;
    auto claim_id = [&](const ExpertSpec& e, const std::string& where) {
        try {
            e.validate();
        } catch (const DomainError& err) {
            throw ConfigError("config: " + where + ": " + err.what());
        }
        if (!ids.insert(e.expert_id).second) {
            throw ConfigError("config: duplicate expert_id '" + e.expert_id + "'");
        }
    };

    for (size_t i = 0; i < layers.size(); ++i) {
        const std::string where = "layers[" + std::to_string(i) + "]";
        if (layers[i].experts.empty()) {
            throw ConfigError("config: " + where + " has no experts");
        }
        if (trim(layers[i].template_text).empty()) {
            throw ConfigError("config: " + where + " has an empty prompt template");
        }
        for (const ExpertSpec& e : layers[i].experts) {
            claim_id(e, where);
            if (e.role == ExpertRole::reliable) {
                throw ConfigError("config: " + where + " expert '" + e.expert_id +
                                  "' has role 'reliable'; only the final expert may");
            }
        }
        if (i >= 1 && uses_placeholder(layers[i].template_text, "INPUT") &&
            !include_original_input_in_refinement) {
            throw ConfigError("config: " + where +
                              " template references {INPUT} but "
                              "include_original_input_in_refinement is false");
        }
    }

    claim_id(final_expert, "final_expert");
    if (final_expert.role != ExpertRole::reliable) {
        throw ConfigError("config: final_expert must have role 'reliable'");
    }
    if (trim(final_template_text).empty()) {
        throw ConfigError("config: final prompt template is empty");
    }
    if (uses_placeholder(final_template_text, "INPUT") &&
        !include_original_input_in_refinement) {
        throw ConfigError("config: final template references {INPUT} but "
                          "include_original_input_in_refinement is false");
    }

    if (rules) {
        if (rules->task != task) {
            throw ConfigError("config: parse rules are for task '" +
                              std::string(to_string(rules->task)) + "' but the run task is '" +
                              std::string(to_string(task)) + "'");
        }
        try {
            rules->validate();
        } catch (const DomainError& err) {
            throw ConfigError(std::string("config: ") + err.what());
        }
    }

    if (stopping) {
        try {
            stopping->validate();
        } catch (const DomainError& err) {
            throw ConfigError(std::string("config: ") + err.what());
        }
        switch (stopping->metric) {
        case StoppingMetric::accuracy:
            break;
        case StoppingMetric::f1:
            if (task == Task::disorders) {
                throw ConfigError("config: stopping metric 'f1' is undefined for the "
                                  "disorders task");
            }
            break;
        case StoppingMetric::neg_mae:
            if (task != Task::phq8_regression) {
                throw ConfigError("config: stopping metric 'neg_mae' requires the PHQ-8 task");
            }
            break;
        }
    }
}

std::string_view task_instructions(Task task) {
    switch (task) {
    case Task::phq8_regression:
        return "Estimate the participant's PHQ-8 depression score from the material above. "
               "Conclude with one line of the exact form:\n"
               "PHQ-8 score: <integer between 0 and 24>";
    case Task::binary:
        return "Decide whether the participant screens positive for depression "
               "(PHQ-8 score of 10 or more). Conclude with one line of the exact form:\n"
               "Classification: <0 for not depressed, 1 for depressed>";
    case Task::concern:
        return "Decide whether the individual described warrants mental health concern. "
               "Conclude with these lines, exactly:\n"
               "Mental concern: <0 for none, 1 for concern, 2 for indeterminate>\n"
               "Disorders: <comma-separated disorder names, or none>";
    case Task::disorders:
        return "Identify the mental health disorders evident in the material above. "
               "Conclude with one line of the exact form:\n"
               "Disorders: <comma-separated disorder names, or none>";
    }
    return "";
}

std::string render_prompt(const std::string& template_text,
                          const std::optional<std::string>& input_text,
                          const std::optional<std::string>& opinions, Task task) {
    std::string out;
    out.reserve(template_text.size() + (input_text ? input_text->size() : 0) +
                (opinions ? opinions->size() : 0));
    for (size_t i = 0; i < template_text.size(); ++i) {
        if (template_text[i] == '{') {
            size_t j = i + 1;
            while (j < template_text.size() &&
                   (std::isupper(static_cast<unsigned char>(template_text[j])) ||
                    template_text[j] == '_')) {
                ++j;
            }
            if (j > i + 1 && j < template_text.size() && template_text[j] == '}') {
                std::string name = template_text.substr(i + 1, j - i - 1);
                if (name == "INPUT") {
                    if (!input_text) {
                        throw TemplateError(
                            "template references {INPUT} but no input was provided");
                    }
                    out += *input_text;
                } else if (name == "OPINIONS") {
                    if (!opinions) {
                        throw TemplateError(
                            "template references {OPINIONS} but no aggregate was provided");
                    }
                    out += *opinions;
                } else if (name == "TASK_INSTRUCTIONS") {
                    out += task_instructions(task);
                } else {
                    throw TemplateError("unknown placeholder {" + name + "}");
                }
                i = j;
                continue;
            }
        }
        out += template_text[i];
    }
    if (out.empty()) throw TemplateError("rendered prompt is empty");
    return out;
}

std::string serialize_aggregate(const LayerAggregate& aggregate) {
    if (aggregate.outputs.empty()) {
        throw DomainError("serialize_aggregate: aggregate is empty");
    }
    std::string out;
    for (size_t i = 0; i < aggregate.outputs.size(); ++i) {
        if (i > 0) out += "\n\n";
        out += "Expert " + std::to_string(i + 1) + " opinion:\n";
        out += aggregate.outputs[i].raw_text;
    }
    return out;
}

namespace {

// Runs every expert against the same prompt, capturing backend failures as
// invalid outputs. Throws AllExpertsFailed when nobody answered.
LayerAggregate execute_layer(const PipelineEnv& env, int layer_index,
                             const std::vector<ExpertSpec>& experts, const std::string& prompt,
                             std::vector<std::string>* failures) {
    if (experts.empty()) throw DomainError("execute_layer: no experts");
    if (env.client == nullptr) throw DomainError("execute_layer: no client");

    LayerAggregate aggregate;
    aggregate.layer_index = layer_index;
    CallContext ctx{layer_index, env.task, env.rules};
    size_t succeeded = 0;
    for (const ExpertSpec& expert : experts) {
        auto started = std::chrono::steady_clock::now();
        try {
            aggregate.outputs.push_back(env.client->complete(expert, prompt, ctx));
            ++succeeded;
        } catch (const BackendError& e) {
            ExpertOutput failed;
            failed.expert_id = expert.expert_id;
            failed.layer_index = layer_index;
            failed.input_digest = sha256_hex(prompt);
            failed.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                    std::chrono::steady_clock::now() - started)
                                    .count();
            aggregate.outputs.push_back(std::move(failed));
            if (failures) {
                failures->push_back("expert '" + expert.expert_id + "': " + e.what());
            }
        }
    }
    if (succeeded == 0) {
        throw AllExpertsFailed("layer " + std::to_string(layer_index) + ": all " +
                               std::to_string(experts.size()) + " experts failed");
    }
    std::stable_sort(aggregate.outputs.begin(), aggregate.outputs.end(),
                     [](const ExpertOutput& a, const ExpertOutput& b) {
                         return a.expert_id < b.expert_id;
                     });
    return aggregate;
}

} // namespace

LayerAggregate run_layer1(const PipelineEnv& env, const std::string& input_text,
                          const std::vector<ExpertSpec>& experts,
                          const std::string& template_text,
                          std::vector<std::string>* failures) {
    std::string prompt = render_prompt(template_text, input_text, std::nullopt, env.task);
    return execute_layer(env, 1, experts, prompt, failures);
}

LayerAggregate run_refinement_layer(const PipelineEnv& env, int k, const LayerAggregate& previous,
                                    const std::vector<ExpertSpec>& experts,
                                    const std::string& template_text,
                                    const std::optional<std::string>& input_text,
                                    std::vector<std::string>* failures) {
    if (k < 2) throw DomainError("run_refinement_layer: k must be >= 2");
    if (k != previous.layer_index + 1) {
        throw DomainError("run_refinement_layer: k=" + std::to_string(k) +
                          " does not follow layer " + std::to_string(previous.layer_index));
    }
    std::string opinions = serialize_aggregate(previous);
    std::string prompt = render_prompt(template_text, input_text, opinions, env.task);
    return execute_layer(env, k, experts, prompt, failures);
}

ExpertOutput run_final_layer(const PipelineEnv& env, const LayerAggregate& previous,
                             const ExpertSpec& reliable, const std::string& template_text,
                             const std::optional<std::string>& input_text) {
    if (reliable.role != ExpertRole::reliable) {
        throw DomainError("run_final_layer: expert '" + reliable.expert_id +
                          "' does not have role 'reliable'");
    }
    if (env.client == nullptr) throw DomainError("run_final_layer: no client");
    std::string opinions = serialize_aggregate(previous);
    std::string prompt = render_prompt(template_text, input_text, opinions, env.task);
    CallContext ctx{previous.layer_index + 1, env.task, env.rules};
    try {
        return env.client->complete(reliable, prompt, ctx);
    } catch (const BackendError& e) {
        throw FinalLayerFailed("consolidation by '" + reliable.expert_id +
                               "' failed: " + e.what());
    }
}

ParsedAssessment layer_point_prediction(const LayerAggregate& aggregate, Task task) {
    if (aggregate.outputs.empty()) {
        throw DomainError("layer_point_prediction: aggregate is empty");
    }
    ParsedAssessment out;
    switch (task) {
    case Task::phq8_regression: {
        std::vector<int> scores;
        for (const ExpertOutput& o : aggregate.outputs) {
            if (o.parsed.valid && o.parsed.phq8) scores.push_back(*o.parsed.phq8);
        }
        if (scores.empty()) break;
        std::sort(scores.begin(), scores.end());
        int median = scores[(scores.size() - 1) / 2]; // lower median on even counts
        out.phq8 = median;
        out.binary = binarize_phq8(median);
        out.valid = true;
        break;
    }
    case Task::binary: {
        int votes[2] = {0, 0};
        for (const ExpertOutput& o : aggregate.outputs) {
            if (o.parsed.valid && o.parsed.binary) ++votes[*o.parsed.binary];
        }
        if (votes[0] + votes[1] == 0) break;
        out.binary = votes[1] > votes[0] ? 1 : 0; // tie goes to the lower code
        out.valid = true;
        break;
    }
    case Task::concern: {
        int votes[3] = {0, 0, 0};
        int total = 0;
        for (const ExpertOutput& o : aggregate.outputs) {
            if (o.parsed.valid && o.parsed.concern) {
                ++votes[*o.parsed.concern];
                ++total;
            }
        }
        if (total == 0) break;
        int winner = 0;
        for (int c = 1; c < 3; ++c) {
            if (votes[c] > votes[winner]) winner = c;
        }
        out.concern = winner;
        out.binary = concern_to_binary(winner);
        out.valid = true;
        break;
    }
    case Task::disorders: {
        // Vote over normalized, sorted, deduplicated sets.
        std::map<std::string, std::pair<int, std::vector<std::string>>> votes;
        for (const ExpertOutput& o : aggregate.outputs) {
            if (!o.parsed.valid || !o.parsed.disorders) continue;
            std::set<std::string> names;
            for (const std::string& d : *o.parsed.disorders) {
                std::string n = normalize_label(d);
                if (!n.empty()) names.insert(std::move(n));
            }
            std::string key;
            for (const std::string& n : names) {
                if (!key.empty()) key += "; ";
                key += n;
            }
            auto [it, inserted] = votes.try_emplace(
                key, 0, std::vector<std::string>(names.begin(), names.end()));
            (void)inserted;
            ++it->second.first;
        }
        if (votes.empty()) break;
        // std::map iterates keys in order, so on tied counts the
        // lexicographically smaller serialization wins.
        auto best = votes.begin();
        for (auto it = std::next(votes.begin()); it != votes.end(); ++it) {
            if (it->second.first > best->second.first) best = it;
        }
        out.disorders = best->second.second;
        out.valid = true;
        break;
    }
    }
    return out;
}

int apply_dynamic_stopping(const std::vector<double>& per_layer_metric, double delta) {
    if (per_layer_metric.empty()) {
        throw DomainError("apply_dynamic_stopping: empty metric sequence");
    }
    if (delta < 0.0) throw DomainError("apply_dynamic_stopping: delta must be >= 0");
    size_t evaluated = per_layer_metric.size();
    for (size_t k = 1; k < per_layer_metric.size(); ++k) {
        if (per_layer_metric[k] - per_layer_metric[k - 1] < delta) {
            evaluated = k + 1; // the layer that failed to gain was still evaluated
            break;
        }
    }
    size_t best = 0;
    for (size_t i = 1; i < evaluated; ++i) {
        if (per_layer_metric[i] > per_layer_metric[best]) best = i;
    }
    return static_cast<int>(best) + 1;
}

namespace {

std::optional<double> stopping_metric_value(StoppingMetric metric, Task task,
                                            const std::vector<ParsedAssessment>& preds,
                                            const std::vector<GroundTruth>& truths,
                                            int& n_scored) {
    std::vector<int> pred_labels;
    std::vector<int> truth_labels;
    std::vector<double> pred_scores;
    std::vector<double> truth_scores;
    int set_matches = 0;
    int set_total = 0;

    for (size_t i = 0; i < preds.size(); ++i) {
        const ParsedAssessment& p = preds[i];
        const GroundTruth& t = truths[i];
        if (!p.valid) continue;
        switch (task) {
        case Task::phq8_regression:
            if (p.phq8 && t.phq8) {
                pred_scores.push_back(static_cast<double>(*p.phq8));
                truth_scores.push_back(static_cast<double>(*t.phq8));
                pred_labels.push_back(binarize_phq8(*p.phq8));
                truth_labels.push_back(binarize_phq8(*t.phq8));
            }
            break;
        case Task::binary:
            if (p.binary && (t.binary || t.phq8)) {
                pred_labels.push_back(*p.binary);
                truth_labels.push_back(t.binary ? *t.binary : binarize_phq8(*t.phq8));
            }
            break;
        case Task::concern:
            if (p.concern && t.concern) {
                std::optional<int> pb = concern_to_binary(*p.concern);
                std::optional<int> tb = concern_to_binary(*t.concern);
                if (pb && tb) {
                    pred_labels.push_back(*pb);
                    truth_labels.push_back(*tb);
                }
            }
            break;
        case Task::disorders:
            if (p.disorders && t.disorders) {
                std::set<std::string> got;
                for (const std::string& d : *p.disorders) got.insert(normalize_label(d));
                std::set<std::string> want;
                for (const std::string& d : *t.disorders) want.insert(normalize_label(d));
                ++set_total;
                if (got == want) ++set_matches;
            }
            break;
        }
    }

    if (task == Task::disorders) {
        n_scored = set_total;
        if (set_total == 0) return std::nullopt;
        return static_cast<double>(set_matches) / static_cast<double>(set_total);
    }

    n_scored = static_cast<int>(task == Task::phq8_regression && metric == StoppingMetric::neg_mae
                                    ? pred_scores.size()
                                    : pred_labels.size());
    if (n_scored == 0) return std::nullopt;
    switch (metric) {
    case StoppingMetric::accuracy:
        return accuracy(pred_labels, truth_labels);
    case StoppingMetric::f1:
        return f1_binary(pred_labels, truth_labels);
    case StoppingMetric::neg_mae:
        return -mean_absolute_error(pred_scores, truth_scores);
    }
    return std::nullopt;
}

std::optional<std::string> refinement_input(const PipelineConfig& config,
                                            const DatasetCase& c) {
    if (config.include_original_input_in_refinement) return c.input_text;
    return std::nullopt;
}

} // namespace

std::string dataset_digest(const Dataset& dataset) {
    json pairs = json::array();
    for (const DatasetCase& c : dataset.cases) {
        pairs.push_back(json::array({c.id, c.input_text}));
    }
    return sha256_hex(pairs.dump());
}

RunManifest run_pipeline(const Dataset& dataset, const PipelineConfig& config,
                         const ExpertClient& client) {
    config.validate();
    if (dataset.cases.empty()) throw DomainError("run_pipeline: empty dataset");

    PipelineEnv env{&client, config.task, config.active_rules()};
    const int n_layers = static_cast<int>(config.layers.size());

    RunManifest manifest;
    manifest.task = config.task;
    manifest.config_digest = config.config_digest;
    manifest.dataset_digest = dataset_digest(dataset);
    manifest.run_id = sha256_hex(manifest.config_digest + ":" + manifest.dataset_digest)
                          .substr(0, 12);
    manifest.started = iso8601_now();

    int selected_depth = n_layers;
    std::vector<std::vector<CaseLayerRecord>> calibration_records;
    std::vector<size_t> calibration_case_index;

    if (config.stopping) {
        const StoppingPolicy& stopping = *config.stopping;
        std::vector<const DatasetCase*> cal_cases;
        for (const std::string& id : stopping.calibration_ids) {
            const DatasetCase* c = dataset.find(id);
            if (c == nullptr) {
                throw DomainError("run_pipeline: calibration id '" + id +
                                  "' is not in the dataset");
            }
            if (!c->truth) {
                throw DomainError("run_pipeline: calibration case '" + id +
                                  "' has no ground truth");
            }
            cal_cases.push_back(c);
            calibration_case_index.push_back(
                static_cast<size_t>(c - dataset.cases.data()));
        }

        calibration_records.assign(cal_cases.size(), {});
        std::vector<LayerAggregate> current(cal_cases.size());
        std::vector<double> metric_series;

        for (int k = 1; k <= n_layers; ++k) {
            const LayerSpec& layer = config.layers[k - 1];
            bounded_parallel_for(
                cal_cases.size(), static_cast<size_t>(config.parallelism), [&](size_t i) {
                    std::vector<std::string> failures;
                    LayerAggregate agg =
                        k == 1 ? run_layer1(env, cal_cases[i]->input_text, layer.experts,
                                            layer.template_text, &failures)
                               : run_refinement_layer(env, k, current[i], layer.experts,
                                                      layer.template_text,
                                                      refinement_input(config, *cal_cases[i]),
                                                      &failures);
                    CaseLayerRecord rec;
                    rec.layer_index = k;
                    rec.outputs = agg.outputs;
                    rec.point_prediction = layer_point_prediction(agg, config.task);
                    rec.failures = std::move(failures);
                    calibration_records[i].push_back(std::move(rec));
                    current[i] = std::move(agg);
                });

            std::vector<ParsedAssessment> preds;
            std::vector<GroundTruth> truths;
            for (size_t i = 0; i < cal_cases.size(); ++i) {
                preds.push_back(calibration_records[i].back().point_prediction);
                truths.push_back(*cal_cases[i]->truth);
            }
            LayerCalibrationMetric lm;
            lm.layer_index = k;
            lm.metric_value =
                stopping_metric_value(stopping.metric, config.task, preds, truths, lm.n_scored);
            manifest.calibration_metrics.push_back(lm);
            metric_series.push_back(lm.metric_value ? *lm.metric_value : kUndefinedMetric);

            if (k >= 2 &&
                metric_series[k - 1] - metric_series[k - 2] < stopping.delta) {
                break; // gain fell below delta; deeper layers are never executed
            }
        }
        selected_depth = apply_dynamic_stopping(metric_series, stopping.delta);
    }

    manifest.selected_depth = selected_depth;
    manifest.cases.resize(dataset.cases.size());

    bounded_parallel_for(
        dataset.cases.size(), static_cast<size_t>(config.parallelism), [&](size_t i) {
            const DatasetCase& c = dataset.cases[i];
            CaseRecord rec;
            rec.case_id = c.id;
            try {
                LayerAggregate aggregate;
                for (int k = 1; k <= selected_depth; ++k) {
                    const LayerSpec& layer = config.layers[k - 1];
                    std::vector<std::string> failures;
                    aggregate =
                        k == 1 ? run_layer1(env, c.input_text, layer.experts,
                                            layer.template_text, &failures)
                               : run_refinement_layer(env, k, aggregate, layer.experts,
                                                      layer.template_text,
                                                      refinement_input(config, c), &failures);
                    CaseLayerRecord lrec;
                    lrec.layer_index = k;
                    lrec.outputs = aggregate.outputs;
                    lrec.point_prediction = layer_point_prediction(aggregate, config.task);
                    lrec.failures = std::move(failures);
                    rec.final_layers.push_back(std::move(lrec));
                }
                ExpertOutput consolidated =
                    run_final_layer(env, aggregate, config.final_expert,
                                    config.final_template_text, refinement_input(config, c));
                rec.final_assessment = consolidated.parsed;
                rec.consolidation = std::move(consolidated);
            } catch (const AllExpertsFailed& e) {
                rec.error = e.what();
            } catch (const FinalLayerFailed& e) {
                rec.error = e.what();
            }
            manifest.cases[i] = std::move(rec);
        });

    for (size_t i = 0; i < calibration_case_index.size(); ++i) {
        manifest.cases[calibration_case_index[i]].calibration_layers =
            std::move(calibration_records[i]);
    }

    manifest.finished = iso8601_now();
    return manifest;
}

} // namespace smmr
