#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "smmr/types.hpp"

namespace smmr {

// Extraction rules for one task. `labeled_patterns` is a priority-ordered
// list of label texts searched case-insensitively; the fallback (PHQ-8 only)
// scans for the last standalone in-range integer when no label matched.
struct ParseRules {
    Task task = Task::phq8_regression;
    std::vector<std::string> labeled_patterns;
    bool fallback_enabled = true;

    static ParseRules defaults_for(Task task);

    void validate() const;
};

// Each parser is total: any input, including empty and multi-megabyte text,
// yields either a value or nullopt (Invalid). Nothing is clamped; a labeled
// value outside its range makes the whole parse Invalid.
std::optional<int> parse_phq8(std::string_view text);
std::optional<int> parse_phq8(std::string_view text, const ParseRules& rules);

std::optional<int> parse_binary(std::string_view text);
std::optional<int> parse_binary(std::string_view text, const ParseRules& rules);

std::optional<int> parse_concern(std::string_view text);
std::optional<int> parse_concern(std::string_view text, const ParseRules& rules);

// "none" after the label yields an empty (valid) list; a missing label yields
// nullopt.
std::optional<std::vector<std::string>> parse_disorders(std::string_view text);
std::optional<std::vector<std::string>> parse_disorders(std::string_view text,
                                                        const ParseRules& rules);

bool is_valid_output(std::string_view text, Task task);
bool is_valid_output(std::string_view text, Task task, const ParseRules& rules);

// Runs the active task's parser (with `rules`) to decide validity, and
// opportunistically fills companion fields with their default rules:
// PHQ-8 scores derive a binary label via the threshold, concern parses pick
// up disorders when present, and vice versa.
ParsedAssessment parse_assessment(std::string_view text, Task task);
ParsedAssessment parse_assessment(std::string_view text, Task task, const ParseRules& rules);

} // namespace smmr
