#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace smmr {

// The four assessment tasks the pipeline can be configured for.
enum class Task {
    phq8_regression,
    binary,
    concern,
    disorders,
};

std::string to_string(Task task);
Task task_from_string(const std::string& name);

enum class CaseFormat {
    conversational,
    descriptive,
};

std::string to_string(CaseFormat format);
CaseFormat case_format_from_string(const std::string& name);

// One speaking turn of an interview transcript.
struct Utterance {
    std::string speaker;
    double start_time = 0.0; // seconds
    std::string text;        // may be empty

    void validate() const;
};

// A full interview, utterances ordered by start time.
struct Transcript {
    std::string id;
    std::vector<Utterance> utterances;

    void validate() const;
};

// A narrative case document.
struct CaseStudy {
    std::string id;
    std::string narrative;
    CaseFormat format = CaseFormat::descriptive;

    void validate() const;
};

// Reference labels for one case. Every field is optional; which ones must be
// present depends on the task the case is used for.
struct GroundTruth {
    std::optional<int> phq8;    // 0..24
    std::optional<int> binary;  // 0|1
    std::optional<int> concern; // 0|1|2
    std::optional<std::vector<std::string>> disorders;

    // Rejects out-of-range values, a binary label inconsistent with the
    // PHQ-8 threshold rule, and duplicate normalized disorder names.
    void validate() const;
};

// Structured extraction from one raw model output. `valid` is true when the
// field(s) required by the active task could be parsed.
struct ParsedAssessment {
    std::optional<int> phq8;
    std::optional<int> binary;
    std::optional<int> concern;
    std::optional<std::vector<std::string>> disorders;
    bool valid = false;
};

// PHQ-8 >= 10 indicates clinically significant depressive symptoms.
// Throws DomainError when score is outside [0, 24].
int binarize_phq8(int score);

// Maps a mental-concern code to a binary label. Code 2 (indeterminate) has no
// binary reading and yields nullopt: the case is omitted from binary metrics
// but still counts as a valid output. Throws DomainError outside {0,1,2}.
std::optional<int> concern_to_binary(int concern);

// Lowercases, strips punctuation, collapses whitespace. Used wherever two
// disorder names are compared.
std::string normalize_label(std::string_view name);

inline constexpr int kPhq8Min = 0;
inline constexpr int kPhq8Max = 24;
inline constexpr int kPhq8Threshold = 10;

} // namespace smmr
