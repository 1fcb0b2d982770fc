#include "smmr/types.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "smmr/errors.hpp"

namespace smmr {

std::string to_string(Task task) {
    switch (task) {
        case Task::phq8_regression: return "phq8_regression";
        case Task::binary: return "binary";
        case Task::concern: return "concern";
        case Task::disorders: return "disorders";
    }
    throw DomainError("unknown Task value");
}

Task task_from_string(const std::string& name) {
    if (name == "phq8_regression") return Task::phq8_regression;
    if (name == "binary") return Task::binary;
    if (name == "concern") return Task::concern;
    if (name == "disorders") return Task::disorders;
    throw DomainError("unknown task: '" + name + "'");
}

std::string to_string(CaseFormat format) {
    switch (format) {
        case CaseFormat::conversational: return "conversational";
        case CaseFormat::descriptive: return "descriptive";
    }
    throw DomainError("unknown CaseFormat value");
}

CaseFormat case_format_from_string(const std::string& name) {
    if (name == "conversational") return CaseFormat::conversational;
    if (name == "descriptive") return CaseFormat::descriptive;
    throw DomainError("unknown case format: '" + name + "'");
}

void Utterance::validate() const {
    if (speaker.empty()) throw DomainError("utterance speaker is empty");
    if (start_time < 0.0) throw DomainError("utterance start_time is negative");
}

void Transcript::validate() const {
    if (id.empty()) throw DomainError("transcript id is empty");
    for (const auto& u : utterances) u.validate();
    for (size_t i = 1; i < utterances.size(); ++i) {
        if (utterances[i].start_time < utterances[i - 1].start_time) {
            throw DomainError("transcript '" + id + "' utterances not sorted by start_time");
        }
    }
}

void CaseStudy::validate() const {
    if (id.empty()) throw DomainError("case study id is empty");
    if (narrative.empty()) throw DomainError("case study '" + id + "' narrative is empty");
}

void GroundTruth::validate() const {
    if (phq8 && (*phq8 < kPhq8Min || *phq8 > kPhq8Max)) {
        throw DomainError("ground truth phq8 out of range: " + std::to_string(*phq8));
    }
    if (binary && *binary != 0 && *binary != 1) {
        throw DomainError("ground truth binary must be 0 or 1");
    }
    if (concern && (*concern < 0 || *concern > 2)) {
        throw DomainError("ground truth concern must be 0, 1 or 2");
    }
    if (phq8 && binary && binarize_phq8(*phq8) != *binary) {
        throw DomainError("ground truth binary label contradicts phq8 threshold rule (phq8=" +
                          std::to_string(*phq8) + ", binary=" + std::to_string(*binary) + ")");
    }
    if (disorders) {
        std::set<std::string> seen;
        for (const auto& d : *disorders) {
            if (!seen.insert(normalize_label(d)).second) {
                throw DomainError("ground truth has duplicate disorder name: '" + d + "'");
            }
        }
    }
}

int binarize_phq8(int score) {
    if (score < kPhq8Min || score > kPhq8Max) {
        throw DomainError("phq8 score out of range [0,24]: " + std::to_string(score));
    }
    return score >= kPhq8Threshold ? 1 : 0;
}

std::optional<int> concern_to_binary(int concern) {
    switch (concern) {
        case 0: return 0;
        case 1: return 1;
        case 2: return std::nullopt;
    }
    throw DomainError("concern code must be 0, 1 or 2, got " + std::to_string(concern));
}

std::string normalize_label(std::string_view name) {
    std::string out;
    out.reserve(name.size());
    bool pending_space = false;
    for (unsigned char c : name) {
        if (std::isalnum(c)) {
            if (pending_space && !out.empty()) out.push_back(' ');
            pending_space = false;
            out.push_back(static_cast<char>(std::tolower(c)));
        } else {
            // Punctuation and whitespace both act as soft separators.
            pending_space = true;
        }
    }
    return out;
}

} // namespace smmr
