#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "smmr/types.hpp"

namespace smmr {

struct SegmentRecord {
    std::string speaker;
    double start_time = 0.0;
    double stop_time = 0.0;
    std::string value;
};

// Parses a delimiter-separated segment file (tab in the header row selects
// TSV, otherwise comma) with required columns speaker, start_time,
// stop_time, value. Errors carry 1-based line numbers.
std::vector<SegmentRecord> parse_segment_file(const std::string& content,
                                              const std::string& source_name);

// Stable sort by start_time; text is preserved verbatim.
Transcript load_daic_transcript(const std::vector<SegmentRecord>& records,
                                const std::string& id);
Transcript load_daic_transcript_file(const std::filesystem::path& path, const std::string& id);

// One line per utterance: "<speaker>: <text> ./", newline-joined, no
// trailing newline.
std::string render_transcript(const Transcript& transcript);

struct LoadedCase {
    CaseStudy case_study;
    GroundTruth truth;
};

// Case-study document: JSON object {id, narrative, format, truth}. The truth
// block requires a concern code; disorders and binary are optional. Unknown
// fields are rejected so schema typos surface early.
LoadedCase load_case_study(const std::string& json_text, const std::string& source_name);
LoadedCase load_case_study_file(const std::filesystem::path& path);

enum class Split { training, testing, validation };

std::string_view to_string(Split split);
Split split_from_string(std::string_view s);

struct SplitSpec {
    std::map<std::string, Split> assignment;
};

// Delimiter-separated file with header (id, split); split values are
// training, testing, validation. A duplicated id is a semantic error.
SplitSpec parse_split_file(const std::string& content, const std::string& source_name);
SplitSpec load_split_file(const std::filesystem::path& path);

struct DatasetCase {
    std::string id;
    std::string input_text;
    std::optional<GroundTruth> truth;
};

struct Dataset {
    std::vector<DatasetCase> cases;

    const DatasetCase* find(const std::string& id) const;
};

// Dataset manifest: JSON {"cases": [...]} where each case has an id plus
// exactly one of "transcript" (segment file path), "case_study" (document
// path), or "input_text" (inline). Relative paths resolve against the
// manifest's directory.
Dataset load_dataset(const std::filesystem::path& manifest_path);

// Ground-truth file: one JSON object mapping case id to a truth block with
// any of phq8, binary, concern, disorders.
std::map<std::string, GroundTruth> parse_truth_map(const std::string& json_text,
                                                   const std::string& source_name);
std::map<std::string, GroundTruth> load_truth_map(const std::filesystem::path& path);

struct SplitResult {
    Dataset training;
    Dataset testing;
    Dataset validation;
    std::vector<std::string> warnings;
};

// Partitions the dataset. Every dataset id must be assigned and every
// assigned id must exist; order within each part follows the input.
SplitResult apply_split(const Dataset& dataset, const SplitSpec& split);

} // namespace smmr
