#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "smmr/types.hpp"

namespace smmr {

// Maps normalized disorder aliases onto canonical names so that
// e.g. "alcoholism" can count as "alcohol use disorder".
class SynonymMap {
public:
    SynonymMap() = default;

    // Both sides are normalized before storage.
    void add(std::string_view alias, std::string_view canonical);

    // Input must already be normalized; unknown names map to themselves.
    const std::string& canonical_of(const std::string& normalized) const;

    size_t size() const { return alias_to_canonical_.size(); }

private:
    std::map<std::string, std::string> alias_to_canonical_;
};

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth);

double f1_binary(const std::vector<int>& pred, const std::vector<int>& truth);

struct MacroScores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    // True when any per-class precision or recall hit a zero denominator
    // (including a class absent from both vectors) and was scored as 0.
    bool degenerate = false;
};

MacroScores macro_scores(const std::vector<int>& pred, const std::vector<int>& truth);

double macro_f1(const std::vector<int>& pred, const std::vector<int>& truth);
double macro_precision(const std::vector<int>& pred, const std::vector<int>& truth);
double macro_recall(const std::vector<int>& pred, const std::vector<int>& truth);

// Mann-Whitney formulation: share of (positive, negative) pairs ranked
// correctly, ties counting one half. Single-class truth has no ranking to
// measure, so the result is empty rather than an exception.
std::optional<double> roc_auc(const std::vector<double>& scores, const std::vector<int>& truth);

double mean_absolute_error(const std::vector<double>& pred, const std::vector<double>& truth);
double root_mean_squared_error(const std::vector<double>& pred,
                               const std::vector<double>& truth);

// Percentage in [0, 100].
double valid_rate(const std::vector<bool>& outputs);

// True when the names are equal after normalization, when the shorter
// name's distinctive tokens all appear in the longer name, or when the
// synonym table maps both onto the same canonical form.
bool disorder_match(std::string_view predicted_name, std::string_view truth_name,
                    const SynonymMap& synonyms);

struct DisorderCaseCount {
    int matched = 0;
    int total = 0;
};

struct DisorderStats {
    double ave = 0.0; // mean of per-case 10 * matched / total
    double sd = 0.0;  // population standard deviation of the same scores
};

DisorderStats disorder_identification_stats(const std::vector<DisorderCaseCount>& per_case);

struct CaseAssessment {
    std::string case_id;
    ParsedAssessment assessment;
};

struct CaseTruth {
    std::string case_id;
    GroundTruth truth;
};

// Undefined metrics stay empty; they are never silently zero and never NaN.
struct MetricsReport {
    Task task = Task::phq8_regression;
    int n_cases = 0;
    int n_valid = 0;
    int n_excluded = 0; // invalid outputs plus indeterminate-mapped concern cases
    double valid_rate_pct = 0.0;

    std::optional<double> accuracy;
    std::optional<double> f1;
    std::optional<double> macro_f1;
    std::optional<double> macro_precision;
    std::optional<double> macro_recall;
    std::optional<double> roc_auc;
    std::optional<double> mae;
    std::optional<double> rmse;
    std::optional<double> disorder_ave;
    std::optional<double> disorder_sd;

    bool degenerate = false;
    std::vector<std::string> notes;
};

// Computes every metric the task supports. Inputs are index-aligned and the
// ids must agree pairwise. Invalid assessments count toward valid_rate but
// are excluded from every metric denominator.
MetricsReport evaluate_run(const std::vector<CaseAssessment>& assessments,
                           const std::vector<CaseTruth>& truths, Task task,
                           const SynonymMap& synonyms);

MetricsReport evaluate_run(const std::vector<CaseAssessment>& assessments,
                           const std::vector<CaseTruth>& truths, Task task);

} // namespace smmr
