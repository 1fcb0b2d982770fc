#include "smmr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "smmr/errors.hpp"

namespace smmr {

namespace {

void check_pair(size_t pred, size_t truth, const char* fn) {
    if (pred != truth) {
        std::ostringstream msg;
        msg << fn << ": length mismatch (" << pred << " vs " << truth << ")";
        throw DomainError(msg.str());
    }
    if (pred == 0) throw DomainError(std::string(fn) + ": empty input");
}

void check_labels(const std::vector<int>& v, const char* fn) {
    for (int x : v) {
        if (x != 0 && x != 1) {
            throw DomainError(std::string(fn) + ": label " + std::to_string(x) +
                              " outside {0,1}");
        }
    }
}

struct Confusion {
    // counts[t][p]: truth t predicted as p
    long long counts[2][2] = {{0, 0}, {0, 0}};

    long long truth_total(int c) const { return counts[c][0] + counts[c][1]; }
    long long pred_total(int c) const { return counts[0][c] + counts[1][c]; }
};

Confusion confusion(const std::vector<int>& pred, const std::vector<int>& truth,
                    const char* fn) {
    check_pair(pred.size(), truth.size(), fn);
    check_labels(pred, fn);
    check_labels(truth, fn);
    Confusion c;
    for (size_t i = 0; i < pred.size(); ++i) ++c.counts[truth[i]][pred[i]];
    return c;
}

// Zero denominators score 0; the flag records that it happened.
double ratio_or_zero(long long num, long long den, bool& degenerate) {
    if (den == 0) {
        degenerate = true;
        return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
}

} // namespace

void SynonymMap::add(std::string_view alias, std::string_view canonical) {
    std::string a = normalize_label(alias);
    std::string c = normalize_label(canonical);
    if (a.empty() || c.empty()) {
        throw DomainError("SynonymMap::add: alias and canonical must be non-empty");
    }
    alias_to_canonical_[std::move(a)] = std::move(c);
}

const std::string& SynonymMap::canonical_of(const std::string& normalized) const {
    auto it = alias_to_canonical_.find(normalized);
    return it == alias_to_canonical_.end() ? normalized : it->second;
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
    check_pair(pred.size(), truth.size(), "accuracy");
    check_labels(pred, "accuracy");
    check_labels(truth, "accuracy");
    size_t hits = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == truth[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double f1_binary(const std::vector<int>& pred, const std::vector<int>& truth) {
    Confusion c = confusion(pred, truth, "f1_binary");
    bool degenerate = false;
    double p = ratio_or_zero(c.counts[1][1], c.pred_total(1), degenerate);
    double r = ratio_or_zero(c.counts[1][1], c.truth_total(1), degenerate);
    if (p + r == 0.0) return 0.0;
    return 2.0 * p * r / (p + r);
}

MacroScores macro_scores(const std::vector<int>& pred, const std::vector<int>& truth) {
    Confusion c = confusion(pred, truth, "macro_scores");
    MacroScores out;
    for (int cls = 0; cls < 2; ++cls) {
        long long tp = c.counts[cls][cls];
        double p = ratio_or_zero(tp, c.pred_total(cls), out.degenerate);
        double r = ratio_or_zero(tp, c.truth_total(cls), out.degenerate);
        double f1 = (p + r == 0.0) ? 0.0 : 2.0 * p * r / (p + r);
        out.precision += p / 2.0;
        out.recall += r / 2.0;
        out.f1 += f1 / 2.0;
    }
    return out;
}

double macro_f1(const std::vector<int>& pred, const std::vector<int>& truth) {
    return macro_scores(pred, truth).f1;
}

double macro_precision(const std::vector<int>& pred, const std::vector<int>& truth) {
    return macro_scores(pred, truth).precision;
}

double macro_recall(const std::vector<int>& pred, const std::vector<int>& truth) {
    return macro_scores(pred, truth).recall;
}

std::optional<double> roc_auc(const std::vector<double>& scores,
                              const std::vector<int>& truth) {
    check_pair(scores.size(), truth.size(), "roc_auc");
    check_labels(truth, "roc_auc");
    size_t n = scores.size();
    size_t n_pos = 0;
    for (int t : truth) {
        if (t == 1) ++n_pos;
    }
    size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;

    // U statistic via midranks; tied scores share a rank, which charges each
    // tied (positive, negative) pair exactly one half.
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    double positive_rank_sum = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        double midrank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (size_t k = i; k <= j; ++k) {
            if (truth[order[k]] == 1) positive_rank_sum += midrank;
        }
        i = j + 1;
    }

    double u = positive_rank_sum -
               static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double mean_absolute_error(const std::vector<double>& pred, const std::vector<double>& truth) {
    check_pair(pred.size(), truth.size(), "mean_absolute_error");
    double sum = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) sum += std::abs(pred[i] - truth[i]);
    return sum / static_cast<double>(pred.size());
}

double root_mean_squared_error(const std::vector<double>& pred,
                               const std::vector<double>& truth) {
    check_pair(pred.size(), truth.size(), "root_mean_squared_error");
    double sum = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        double d = pred[i] - truth[i];
        sum += d * d;
    }
    return std::sqrt(sum / static_cast<double>(pred.size()));
}

double valid_rate(const std::vector<bool>& outputs) {
    if (outputs.empty()) throw DomainError("valid_rate: empty input");
    long long valid = std::count(outputs.begin(), outputs.end(), true);
    return 100.0 * static_cast<double>(valid) / static_cast<double>(outputs.size());
}

namespace {

// Suffix words that carry no identity on their own; "disorder" alone must
// not match "panic disorder".
bool is_generic_token(std::string_view t) {
    static const char* const kGeneric[] = {"disorder", "disorders", "syndrome", "condition",
                                           "spectrum",  "episode",   "type",     "disease"};
    for (const char* g : kGeneric) {
        if (t == g) return true;
    }
    return false;
}

std::vector<std::string> tokens_of(const std::string& normalized) {
    std::vector<std::string> out;
    std::istringstream in(normalized);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

bool head_tokens_contained(const std::vector<std::string>& shorter,
                           const std::vector<std::string>& longer) {
    std::set<std::string> pool(longer.begin(), longer.end());
    bool any_head = false;
    for (const std::string& t : shorter) {
        if (is_generic_token(t)) continue;
        any_head = true;
        if (pool.find(t) == pool.end()) return false;
    }
    return any_head;
}

} // namespace

bool disorder_match(std::string_view predicted_name, std::string_view truth_name,
                    const SynonymMap& synonyms) {
    std::string a = normalize_label(predicted_name);
    std::string b = normalize_label(truth_name);
    if (a.empty() || b.empty()) return false;
    if (a == b) return true;

    std::vector<std::string> ta = tokens_of(a);
    std::vector<std::string> tb = tokens_of(b);
    if (head_tokens_contained(ta, tb) || head_tokens_contained(tb, ta)) return true;

    return synonyms.canonical_of(a) == synonyms.canonical_of(b);
}

DisorderStats disorder_identification_stats(const std::vector<DisorderCaseCount>& per_case) {
    if (per_case.empty()) throw DomainError("disorder_identification_stats: empty input");
    std::vector<double> scores;
    scores.reserve(per_case.size());
    for (const DisorderCaseCount& c : per_case) {
        if (c.total < 1) throw DomainError("disorder_identification_stats: case total < 1");
        if (c.matched < 0 || c.matched > c.total) {
            throw DomainError("disorder_identification_stats: matched outside [0, total]");
        }
        scores.push_back(10.0 * static_cast<double>(c.matched) / static_cast<double>(c.total));
    }
    double mean = 0.0;
    for (double s : scores) mean += s;
    mean /= static_cast<double>(scores.size());
    double var = 0.0;
    for (double s : scores) var += (s - mean) * (s - mean);
    var /= static_cast<double>(scores.size());
    return {mean, std::sqrt(var)};
}

namespace {

void note(MetricsReport& report, std::string text) { report.notes.push_back(std::move(text)); }

int effective_truth_binary(const GroundTruth& truth, const std::string& case_id) {
    if (truth.binary) return *truth.binary;
    if (truth.phq8) return binarize_phq8(*truth.phq8);
    throw DomainError("evaluate_run: ground truth for case '" + case_id +
                      "' has no binary label or PHQ-8 score");
}

void fill_classification(MetricsReport& report, const std::vector<int>& pred,
                         const std::vector<int>& truth) {
    if (pred.empty()) return;
    report.accuracy = accuracy(pred, truth);
    report.f1 = f1_binary(pred, truth);
    MacroScores macro = macro_scores(pred, truth);
    report.macro_f1 = macro.f1;
    report.macro_precision = macro.precision;
    report.macro_recall = macro.recall;
    if (macro.degenerate) report.degenerate = true;
}

DisorderCaseCount count_matches(const std::vector<std::string>& predicted,
                                const std::vector<std::string>& truth,
                                const SynonymMap& synonyms) {
    DisorderCaseCount out;
    out.total = static_cast<int>(truth.size());
    for (const std::string& t : truth) {
        for (const std::string& p : predicted) {
            if (disorder_match(p, t, synonyms)) {
                ++out.matched;
                break;
            }
        }
    }
    return out;
}

} // namespace

MetricsReport evaluate_run(const std::vector<CaseAssessment>& assessments,
                           const std::vector<CaseTruth>& truths, Task task,
                           const SynonymMap& synonyms) {
    if (assessments.size() != truths.size()) {
        throw DomainError("evaluate_run: assessment/truth length mismatch");
    }
    if (assessments.empty()) throw DomainError("evaluate_run: empty input");
    for (size_t i = 0; i < assessments.size(); ++i) {
        if (assessments[i].case_id != truths[i].case_id) {
            throw DomainError("evaluate_run: case id mismatch at index " + std::to_string(i) +
                              " ('" + assessments[i].case_id + "' vs '" + truths[i].case_id +
                              "')");
        }
    }

    MetricsReport report;
    report.task = task;
    report.n_cases = static_cast<int>(assessments.size());
    std::vector<bool> validity;
    validity.reserve(assessments.size());
    for (const CaseAssessment& a : assessments) validity.push_back(a.assessment.valid);
    report.n_valid = static_cast<int>(std::count(validity.begin(), validity.end(), true));
    report.n_excluded = report.n_cases - report.n_valid;
    report.valid_rate_pct = valid_rate(validity);
    if (report.n_valid == 0) {
        report.degenerate = true;
        note(report, "no valid outputs; all metrics undefined");
        return report;
    }

    switch (task) {
    case Task::phq8_regression: {
        std::vector<double> pred_scores;
        std::vector<double> truth_scores;
        std::vector<int> pred_bin;
        std::vector<int> truth_bin;
        for (size_t i = 0; i < assessments.size(); ++i) {
            const CaseAssessment& a = assessments[i];
            if (!a.assessment.valid) continue;
            if (!a.assessment.phq8) {
                throw DomainError("evaluate_run: valid assessment for case '" + a.case_id +
                                  "' lacks a PHQ-8 score");
            }
            if (!truths[i].truth.phq8) {
                throw DomainError("evaluate_run: ground truth for case '" + a.case_id +
                                  "' lacks a PHQ-8 score");
            }
            pred_scores.push_back(static_cast<double>(*a.assessment.phq8));
            truth_scores.push_back(static_cast<double>(*truths[i].truth.phq8));
            pred_bin.push_back(binarize_phq8(*a.assessment.phq8));
            truth_bin.push_back(binarize_phq8(*truths[i].truth.phq8));
        }
        report.mae = mean_absolute_error(pred_scores, truth_scores);
        report.rmse = root_mean_squared_error(pred_scores, truth_scores);
        fill_classification(report, pred_bin, truth_bin);
        report.roc_auc = roc_auc(pred_scores, truth_bin);
        if (!report.roc_auc) {
            report.degenerate = true;
            note(report, "single-class ground truth; ROC AUC undefined");
        }
        break;
    }
    case Task::binary: {
        std::vector<int> pred;
        std::vector<int> truth;
        for (size_t i = 0; i < assessments.size(); ++i) {
            const CaseAssessment& a = assessments[i];
            if (!a.assessment.valid) continue;
            if (!a.assessment.binary) {
                throw DomainError("evaluate_run: valid assessment for case '" + a.case_id +
                                  "' lacks a binary label");
            }
            pred.push_back(*a.assessment.binary);
            truth.push_back(effective_truth_binary(truths[i].truth, a.case_id));
        }
        fill_classification(report, pred, truth);
        break;
    }
    case Task::concern: {
        std::vector<int> pred;
        std::vector<int> truth;
        int indeterminate = 0;
        std::vector<DisorderCaseCount> per_case;
        for (size_t i = 0; i < assessments.size(); ++i) {
            const CaseAssessment& a = assessments[i];
            if (!a.assessment.valid) continue;
            if (!a.assessment.concern) {
                throw DomainError("evaluate_run: valid assessment for case '" + a.case_id +
                                  "' lacks a concern code");
            }
            if (!truths[i].truth.concern) {
                throw DomainError("evaluate_run: ground truth for case '" + a.case_id +
                                  "' lacks a concern code");
            }
            const GroundTruth& gt = truths[i].truth;
            if (gt.disorders && !gt.disorders->empty()) {
                std::vector<std::string> predicted =
                    a.assessment.disorders.value_or(std::vector<std::string>{});
                per_case.push_back(count_matches(predicted, *gt.disorders, synonyms));
            }
            std::optional<int> p = concern_to_binary(*a.assessment.concern);
            std::optional<int> t = concern_to_binary(*gt.concern);
            if (!p || !t) {
                ++indeterminate;
                ++report.n_excluded;
                continue;
            }
            pred.push_back(*p);
            truth.push_back(*t);
        }
        if (indeterminate > 0) {
            note(report, std::to_string(indeterminate) +
                             " indeterminate case(s) excluded from binary metrics");
        }
        if (pred.empty()) {
            report.degenerate = true;
            note(report, "no scoreable cases after exclusions; classification undefined");
        } else {
            fill_classification(report, pred, truth);
        }
        if (!per_case.empty()) {
            DisorderStats stats = disorder_identification_stats(per_case);
            report.disorder_ave = stats.ave;
            report.disorder_sd = stats.sd;
        }
        break;
    }
    case Task::disorders: {
        std::vector<DisorderCaseCount> per_case;
        for (size_t i = 0; i < assessments.size(); ++i) {
            const CaseAssessment& a = assessments[i];
            if (!a.assessment.valid) continue;
            if (!a.assessment.disorders) {
                throw DomainError("evaluate_run: valid assessment for case '" + a.case_id +
                                  "' lacks a disorder list");
            }
            const GroundTruth& gt = truths[i].truth;
            if (gt.disorders && !gt.disorders->empty()) {
                per_case.push_back(count_matches(*a.assessment.disorders, *gt.disorders, synonyms));
            }
        }
        if (per_case.empty()) {
            report.degenerate = true;
            note(report, "no cases with ground-truth disorders; stats undefined");
        } else {
            DisorderStats stats = disorder_identification_stats(per_case);
            report.disorder_ave = stats.ave;
            report.disorder_sd = stats.sd;
        }
        break;
    }
    }
    return report;
}

MetricsReport evaluate_run(const std::vector<CaseAssessment>& assessments,
                           const std::vector<CaseTruth>& truths, Task task) {
    return evaluate_run(assessments, truths, task, SynonymMap());
}

} // namespace smmr
