#include "cli.hpp"

#include <filesystem>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "smmr/config.hpp"
#include "smmr/errors.hpp"
#include "smmr/ingestion.hpp"
#include "smmr/manifest.hpp"
#include "smmr/metrics.hpp"
#include "smmr/orchestrator.hpp"
#include "smmr/report.hpp"
#include "smmr/util.hpp"

namespace smmr::cli {

using nlohmann::json;

namespace {

int classify_error(const std::exception& e, std::ostream& err) {
    err << "error: " << e.what() << "\n";
    if (dynamic_cast<const BackendError*>(&e) != nullptr ||
        dynamic_cast<const AllExpertsFailed*>(&e) != nullptr) {
        return kExitBackend;
    }
    return kExitUsage;
}

std::set<std::string> subset_ids(const std::string& split_path, const std::string& subset) {
    SplitSpec spec = load_split_file(split_path);
    Split wanted = split_from_string(subset);
    std::set<std::string> ids;
    for (const auto& [id, split] : spec.assignment) {
        if (split == wanted) ids.insert(id);
    }
    return ids;
}

SynonymMap load_synonyms(const std::string& path) {
    json doc;
    try {
        doc = json::parse(read_text_file(path));
    } catch (const IngestError&) {
        throw;
    } catch (const std::exception& e) {
        throw IngestError(path + ": invalid JSON: " + e.what());
    }
    if (!doc.is_object()) {
        throw IngestError(path + ": expected an object mapping alias to canonical name");
    }
    SynonymMap synonyms;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (!it.value().is_string()) {
            throw IngestError(path + ": entry '" + it.key() + "' must map to a string");
        }
        synonyms.add(it.key(), it.value().get<std::string>());
    }
    return synonyms;
}

std::string format_metric_value(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

// Assessment/truth pairs for the manifest's cases, optionally restricted to
// a subset of ids, aligned in manifest order.
void collect_eval_inputs(const RunManifest& manifest,
                         const std::map<std::string, GroundTruth>& truth_map,
                         const std::set<std::string>* keep,
                         std::vector<CaseAssessment>& assessments,
                         std::vector<CaseTruth>& truths) {
    for (const CaseRecord& c : manifest.cases) {
        if (keep != nullptr && keep->count(c.case_id) == 0) continue;
        auto it = truth_map.find(c.case_id);
        if (it == truth_map.end()) {
            throw DomainError("no ground truth for case '" + c.case_id + "'");
        }
        assessments.push_back({c.case_id, c.final_assessment});
        truths.push_back({c.case_id, it->second});
    }
    if (assessments.empty()) throw DomainError("no cases to evaluate");
}

void print_report_details(const MetricsReport& report, std::ostream& out) {
    out << "n_cases=" << report.n_cases << " n_valid=" << report.n_valid
        << " n_excluded=" << report.n_excluded
        << (report.degenerate ? " degenerate=true" : "") << "\n";
    for (const std::string& note : report.notes) out << "note: " << note << "\n";
}

json metrics_to_json(const MetricsReport& m) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json j;
    j["task"] = std::string(to_string(m.task));
    j["n_cases"] = m.n_cases;
    j["n_valid"] = m.n_valid;
    j["n_excluded"] = m.n_excluded;
    j["valid_rate_pct"] = m.valid_rate_pct;
    j["accuracy"] = opt(m.accuracy);
    j["f1"] = opt(m.f1);
    j["macro_f1"] = opt(m.macro_f1);
    j["macro_precision"] = opt(m.macro_precision);
    j["macro_recall"] = opt(m.macro_recall);
    j["roc_auc"] = opt(m.roc_auc);
    j["mae"] = opt(m.mae);
    j["rmse"] = opt(m.rmse);
    j["disorder_ave"] = opt(m.disorder_ave);
    j["disorder_sd"] = opt(m.disorder_sd);
    j["degenerate"] = m.degenerate;
    j["notes"] = m.notes;
    return j;
}

} // namespace

int cmd_run(const RunArgs& args, std::ostream& out, std::ostream& err) {
    try {
        PipelineConfig config = load_pipeline_config(args.config_path);
        if (args.parallelism) {
            config.parallelism = *args.parallelism;
            config.validate();
        }

        Dataset dataset = load_dataset(args.dataset_path);
        if (args.split_path) {
            if (!args.subset) throw ConfigError("--split requires --subset");
            SplitSpec spec = load_split_file(*args.split_path);
            SplitResult parts = apply_split(dataset, spec);
            for (const std::string& w : parts.warnings) err << "warning: " << w << "\n";
            switch (split_from_string(*args.subset)) {
            case Split::training: dataset = std::move(parts.training); break;
            case Split::testing: dataset = std::move(parts.testing); break;
            case Split::validation: dataset = std::move(parts.validation); break;
            }
            if (dataset.cases.empty()) {
                throw DomainError("subset '" + *args.subset + "' selects no cases");
            }
        } else if (args.subset) {
            throw ConfigError("--subset requires --split");
        }

        ExpertClient::Options options;
        options.retry = config.retry;
        if (!args.no_cache) {
            std::filesystem::path cache_dir =
                args.cache_dir ? std::filesystem::path(*args.cache_dir)
                               : std::filesystem::path(args.out_path).parent_path() /
                                     "smmr-cache";
            options.cache_dir = cache_dir;
        }
        ExpertClient client(options);

        RunManifest manifest = run_pipeline(dataset, config, client);
        write_run_manifest(args.out_path, manifest);

        out << "run " << manifest.run_id << ": task=" << to_string(manifest.task)
            << " cases=" << manifest.cases.size()
            << " selected_depth=" << manifest.selected_depth << "\n";
        for (const LayerCalibrationMetric& lm : manifest.calibration_metrics) {
            out << "calibration layer " << lm.layer_index << ": ";
            if (lm.metric_value) {
                out << format_metric_value(*lm.metric_value);
            } else {
                out << "undefined";
            }
            out << " (n=" << lm.n_scored << ")\n";
        }
        int failed_cases = 0;
        for (const CaseRecord& c : manifest.cases) {
            if (!c.error.empty()) {
                ++failed_cases;
                err << "warning: case '" << c.case_id << "': " << c.error << "\n";
            }
        }
        if (failed_cases > 0) {
            err << "warning: " << failed_cases << " case(s) recorded with errors\n";
        }
        out << "manifest written to " << args.out_path << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        return classify_error(e, err);
    }
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
    try {
        RunManifest manifest = load_run_manifest(args.manifest_path);
        std::map<std::string, GroundTruth> truth_map = load_truth_map(args.truth_path);

        Task task = manifest.task;
        if (args.task) {
            task = task_from_string(*args.task);
            if (task != manifest.task) {
                err << "note: evaluating as task '" << to_string(task)
                    << "' (manifest ran task '" << to_string(manifest.task) << "')\n";
            }
        }

        if (args.config_path) {
            std::string digest = config_canonical_digest(read_text_file(*args.config_path));
            if (digest != manifest.config_digest) {
                out << "warning: config digest mismatch (manifest " << manifest.config_digest
                    << ", file " << digest << ")\n";
            }
        }

        SynonymMap synonyms;
        if (args.synonyms_path) synonyms = load_synonyms(*args.synonyms_path);

        std::optional<std::set<std::string>> keep;
        if (args.split_path) {
            if (!args.subset) throw ConfigError("--split requires --subset");
            keep = subset_ids(*args.split_path, *args.subset);
        } else if (args.subset) {
            throw ConfigError("--subset requires --split");
        }

        std::vector<CaseAssessment> assessments;
        std::vector<CaseTruth> truths;
        collect_eval_inputs(manifest, truth_map, keep ? &*keep : nullptr, assessments, truths);

        MetricsReport report = evaluate_run(assessments, truths, task, synonyms);
        TableLayout layout = layout_for_task(task);
        std::vector<TableRow> rows = {
            row_from_metrics(layout, "run " + manifest.run_id, report)};
        out << render_table(layout, rows);
        print_report_details(report, out);

        if (args.out_path) {
            write_file_atomic(*args.out_path, metrics_to_json(report).dump(2) + "\n");
            out << "metrics written to " << *args.out_path << "\n";
        }
        return kExitOk;
    } catch (const std::exception& e) {
        return classify_error(e, err);
    }
}

int cmd_compare(const CompareArgs& args, std::ostream& out, std::ostream& err) {
    try {
        RenderOptions options;
        options.highlight_best = true;
        options.delta_row = true;

        if (args.prebaked_path) {
            if (args.baseline_path || args.enhanced_path || args.truth_path) {
                throw ConfigError("--prebaked excludes --baseline/--enhanced/--truth");
            }
            PrebakedTable table =
                parse_prebaked_table(read_text_file(*args.prebaked_path), *args.prebaked_path);
            options.delta_row = table.rows.size() == 2;
            out << render_table(table.layout, table.rows, options);
            return kExitOk;
        }

        if (!args.baseline_path || !args.enhanced_path || !args.truth_path) {
            throw ConfigError("compare needs --baseline, --enhanced, and --truth "
                              "(or --prebaked)");
        }
        RunManifest baseline = load_run_manifest(*args.baseline_path);
        RunManifest enhanced = load_run_manifest(*args.enhanced_path);
        if (baseline.task != enhanced.task) {
            throw DomainError("manifests ran different tasks ('" +
                              std::string(to_string(baseline.task)) + "' vs '" +
                              std::string(to_string(enhanced.task)) + "')");
        }
        std::set<std::string> baseline_ids;
        for (const CaseRecord& c : baseline.cases) baseline_ids.insert(c.case_id);
        std::set<std::string> enhanced_ids;
        for (const CaseRecord& c : enhanced.cases) enhanced_ids.insert(c.case_id);
        if (baseline_ids != enhanced_ids) {
            throw DomainError("manifests cover different case ids");
        }

        std::map<std::string, GroundTruth> truth_map = load_truth_map(*args.truth_path);
        SynonymMap synonyms;
        if (args.synonyms_path) synonyms = load_synonyms(*args.synonyms_path);

        auto evaluate = [&](const RunManifest& manifest) {
            std::vector<CaseAssessment> assessments;
            std::vector<CaseTruth> truths;
            collect_eval_inputs(manifest, truth_map, nullptr, assessments, truths);
            return evaluate_run(assessments, truths, manifest.task, synonyms);
        };
        MetricsReport baseline_report = evaluate(baseline);
        MetricsReport enhanced_report = evaluate(enhanced);

        TableLayout layout = layout_for_task(baseline.task);
        std::vector<TableRow> rows = {
            row_from_metrics(layout, "Baseline", baseline_report),
            row_from_metrics(layout, "SMMR Enhanced", enhanced_report),
        };
        out << render_table(layout, rows, options);
        out << "Baseline: ";
        print_report_details(baseline_report, out);
        out << "SMMR Enhanced: ";
        print_report_details(enhanced_report, out);
        return kExitOk;
    } catch (const std::exception& e) {
        return classify_error(e, err);
    }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Stacked multi-model reasoning pipeline"};
    app.require_subcommand(1);

    RunArgs run_args;
    CLI::App* run = app.add_subcommand("run", "Execute a pipeline over a dataset");
    run->add_option("--config", run_args.config_path, "Pipeline configuration file")
        ->required();
    run->add_option("--dataset", run_args.dataset_path, "Dataset manifest file")->required();
    run->add_option("--out", run_args.out_path, "Output manifest path")->required();
    run->add_option("--parallelism", run_args.parallelism, "Concurrent case limit");
    run->add_option("--cache-dir", run_args.cache_dir, "Response cache directory");
    run->add_flag("--no-cache", run_args.no_cache, "Disable the response cache");
    run->add_option("--split", run_args.split_path, "Split assignment file");
    run->add_option("--subset", run_args.subset, "Subset to run (training|testing|validation)");

    EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "Score a run manifest against ground truth");
    eval->add_option("--manifest", eval_args.manifest_path, "Run manifest path")->required();
    eval->add_option("--truth", eval_args.truth_path, "Ground-truth file")->required();
    eval->add_option("--task", eval_args.task, "Evaluate as this task");
    eval->add_option("--config", eval_args.config_path, "Config file for digest check");
    eval->add_option("--synonyms", eval_args.synonyms_path, "Disorder synonym table");
    eval->add_option("--out", eval_args.out_path, "Write metrics as JSON");
    eval->add_option("--split", eval_args.split_path, "Split assignment file");
    eval->add_option("--subset", eval_args.subset, "Subset to evaluate");

    CompareArgs compare_args;
    CLI::App* compare = app.add_subcommand("compare", "Baseline vs enhanced comparison table");
    compare->add_option("--baseline", compare_args.baseline_path, "Baseline run manifest");
    compare->add_option("--enhanced", compare_args.enhanced_path, "Enhanced run manifest");
    compare->add_option("--truth", compare_args.truth_path, "Ground-truth file");
    compare->add_option("--synonyms", compare_args.synonyms_path, "Disorder synonym table");
    compare->add_option("--prebaked", compare_args.prebaked_path,
                        "Render a stored-numbers table instead of evaluating manifests");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }

    if (run->parsed()) return cmd_run(run_args, out, err);
    if (eval->parsed()) return cmd_eval(eval_args, out, err);
    return cmd_compare(compare_args, out, err);
}

} // namespace smmr::cli
