#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <benchmark/benchmark.h>

#include "smmr/digest.hpp"
#include "smmr/ingestion.hpp"
#include "smmr/metrics.hpp"
#include "smmr/orchestrator.hpp"
#include "smmr/parsers.hpp"
#include "smmr/types.hpp"

using namespace smmr;

namespace {

std::string sample_output() {
    return "The participant reports sleep disruption and low energy across most "
           "days, with some loss of interest in previously enjoyable activities.\n"
           "Considering the eight symptom domains individually, the evidence "
           "supports a moderate presentation.\n"
           "PHQ-8 score: 13\n";
}

Transcript sample_transcript(int turns) {
    Transcript t;
    t.id = "bench";
    for (int i = 0; i < turns; ++i) {
        Utterance u;
        u.speaker = i % 2 == 0 ? "Ellie" : "Participant";
        u.start_time = double(i);
        u.text = "turn " + std::to_string(i) + " with a short remark about sleep";
        t.utterances.push_back(std::move(u));
    }
    return t;
}

void bm_parse_phq8(benchmark::State& state) {
    std::string text = sample_output();
    for (auto _ : state) {
        benchmark::DoNotOptimize(parse_phq8(text));
    }
}
BENCHMARK(bm_parse_phq8);

void bm_parse_disorders(benchmark::State& state) {
    std::string text =
        "Assessment complete.\nDisorders: major depressive disorder, generalized "
        "anxiety disorder and alcohol use disorder\n";
    for (auto _ : state) {
        benchmark::DoNotOptimize(parse_disorders(text));
    }
}
BENCHMARK(bm_parse_disorders);

void bm_serialize_aggregate(benchmark::State& state) {
    LayerAggregate agg;
    agg.layer_index = 1;
    for (int i = 0; i < state.range(0); ++i) {
        ExpertOutput o;
        o.expert_id = "expert" + std::to_string(i);
        o.raw_text = sample_output();
        agg.outputs.push_back(std::move(o));
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(serialize_aggregate(agg));
    }
}
BENCHMARK(bm_serialize_aggregate)->Arg(3)->Arg(10);

void bm_roc_auc(benchmark::State& state) {
    std::mt19937 gen(7);
    int n = static_cast<int>(state.range(0));
    std::vector<double> scores(n);
    std::vector<int> truth(n);
    std::uniform_int_distribution<int> score_dist(0, 24);
    std::uniform_int_distribution<int> label_dist(0, 1);
    for (int i = 0; i < n; ++i) {
        scores[i] = double(score_dist(gen)); // integer grid forces tie handling
        truth[i] = label_dist(gen);
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(roc_auc(scores, truth));
    }
}
BENCHMARK(bm_roc_auc)->Arg(100)->Arg(1000);

void bm_dynamic_stopping(benchmark::State& state) {
    std::vector<double> metric = {0.42, 0.55, 0.61, 0.64, 0.66, 0.66};
    for (auto _ : state) {
        benchmark::DoNotOptimize(apply_dynamic_stopping(metric, 0.02));
    }
}
BENCHMARK(bm_dynamic_stopping);

void bm_render_transcript(benchmark::State& state) {
    Transcript t = sample_transcript(static_cast<int>(state.range(0)));
    for (auto _ : state) {
        benchmark::DoNotOptimize(render_transcript(t));
    }
}
BENCHMARK(bm_render_transcript)->Arg(50)->Arg(500);

void bm_sha256_hex(benchmark::State& state) {
    std::string prompt(static_cast<size_t>(state.range(0)), 'x');
    for (auto _ : state) {
        benchmark::DoNotOptimize(sha256_hex(prompt));
    }
}
BENCHMARK(bm_sha256_hex)->Arg(256)->Arg(16384);

void bm_evaluate_run(benchmark::State& state) {
    int n = static_cast<int>(state.range(0));
    std::vector<CaseAssessment> assessments;
    std::vector<CaseTruth> truths;
    std::mt19937 gen(11);
    std::uniform_int_distribution<int> score_dist(0, 24);
    for (int i = 0; i < n; ++i) {
        std::string id = "case" + std::to_string(i);
        ParsedAssessment pa;
        pa.phq8 = score_dist(gen);
        pa.binary = binarize_phq8(*pa.phq8);
        pa.valid = true;
        assessments.push_back({id, pa});
        GroundTruth gt;
        gt.phq8 = score_dist(gen);
        truths.push_back({id, gt});
    }
    for (auto _ : state) {
        benchmark::DoNotOptimize(evaluate_run(assessments, truths, Task::phq8_regression));
    }
}
BENCHMARK(bm_evaluate_run)->Arg(200);

} // namespace

BENCHMARK_MAIN();
