#include "smmr/ingestion.hpp"

#include <algorithm>
#include <cstdlib>
#include <set>
#include <sstream>

#include <json.hpp>

#include "smmr/errors.hpp"
#include "smmr/util.hpp"

namespace smmr {

using nlohmann::json;

namespace {

std::vector<std::string> split_line(const std::string& line, char delim) {
    std::vector<std::string> fields;
    size_t start = 0;
    for (size_t i = 0; i <= line.size(); ++i) {
        if (i == line.size() || line[i] == delim) {
            fields.emplace_back(line.substr(start, i - start));
            start = i + 1;
        }
    }
    return fields;
}

IngestError at_line(const std::string& source, size_t line_no, const std::string& what) {
    return IngestError(source + ":" + std::to_string(line_no) + ": " + what);
}

double parse_time_field(const std::string& field, const std::string& source, size_t line_no,
                        const char* column) {
    std::string t = trim(field);
    if (t.empty()) throw at_line(source, line_no, std::string("empty ") + column);
    const char* begin = t.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end != begin + t.size()) {
        throw at_line(source, line_no, std::string("malformed ") + column + " '" + t + "'");
    }
    return v;
}

} // namespace

std::vector<SegmentRecord> parse_segment_file(const std::string& content,
                                              const std::string& source_name) {
    std::vector<std::string> lines;
    {
        size_t start = 0;
        for (size_t i = 0; i <= content.size(); ++i) {
            if (i == content.size() || content[i] == '\n') {
                std::string line = content.substr(start, i - start);
                if (!line.empty() && line.back() == '\r') line.pop_back();
                lines.push_back(std::move(line));
                start = i + 1;
            }
        }
        if (!lines.empty() && lines.back().empty()) lines.pop_back();
    }

    size_t header_idx = 0;
    while (header_idx < lines.size() && trim(lines[header_idx]).empty()) ++header_idx;
    if (header_idx >= lines.size()) throw IngestError(source_name + ": no header row");

    const std::string& header = lines[header_idx];
    char delim = header.find('\t') != std::string::npos ? '\t' : ',';
    std::vector<std::string> columns = split_line(header, delim);
    int speaker_col = -1, start_col = -1, stop_col = -1, value_col = -1;
    for (size_t i = 0; i < columns.size(); ++i) {
        std::string name = to_lower(trim(columns[i]));
        if (name == "speaker") speaker_col = static_cast<int>(i);
        else if (name == "start_time") start_col = static_cast<int>(i);
        else if (name == "stop_time") stop_col = static_cast<int>(i);
        else if (name == "value") value_col = static_cast<int>(i);
    }
    for (auto [col, name] : {std::pair{speaker_col, "speaker"}, {start_col, "start_time"},
                             {stop_col, "stop_time"}, {value_col, "value"}}) {
        if (col < 0) throw IngestError(source_name + ": missing column '" + name + "'");
    }

    std::vector<SegmentRecord> records;
    for (size_t i = header_idx + 1; i < lines.size(); ++i) {
        size_t line_no = i + 1;
        if (trim(lines[i]).empty()) continue;
        std::vector<std::string> fields = split_line(lines[i], delim);
        size_t expected = columns.size();
        if (fields.size() > expected) {
            // Unquoted delimiters inside the text are tolerable only when the
            // value column is last; then the tail glues back together.
            if (value_col == static_cast<int>(expected) - 1) {
                std::string glued = fields[expected - 1];
                for (size_t j = expected; j < fields.size(); ++j) {
                    glued += delim;
                    glued += fields[j];
                }
                fields.resize(expected);
                fields[expected - 1] = std::move(glued);
            } else {
                throw at_line(source_name, line_no, "too many fields");
            }
        }
        if (fields.size() < expected) throw at_line(source_name, line_no, "too few fields");

        SegmentRecord rec;
        rec.speaker = trim(fields[speaker_col]);
        rec.start_time = parse_time_field(fields[start_col], source_name, line_no, "start_time");
        rec.stop_time = parse_time_field(fields[stop_col], source_name, line_no, "stop_time");
        rec.value = fields[value_col];
        if (rec.speaker.empty()) throw at_line(source_name, line_no, "empty speaker");
        if (rec.start_time > rec.stop_time) {
            throw at_line(source_name, line_no, "start_time after stop_time");
        }
        records.push_back(std::move(rec));
    }
    return records;
}

Transcript load_daic_transcript(const std::vector<SegmentRecord>& records,
                                const std::string& id) {
    if (records.empty()) throw IngestError("transcript '" + id + "': no records");
    std::vector<size_t> order(records.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return records[a].start_time < records[b].start_time;
    });

    Transcript t;
    t.id = id;
    t.utterances.reserve(records.size());
    for (size_t idx : order) {
        Utterance u;
        u.speaker = records[idx].speaker;
        u.start_time = records[idx].start_time;
        u.text = records[idx].value;
        t.utterances.push_back(std::move(u));
    }
    t.validate();
    return t;
}

Transcript load_daic_transcript_file(const std::filesystem::path& path, const std::string& id) {
    return load_daic_transcript(parse_segment_file(read_text_file(path), path.string()), id);
}

std::string render_transcript(const Transcript& transcript) {
    std::string out;
    for (size_t i = 0; i < transcript.utterances.size(); ++i) {
        if (i > 0) out += '\n';
        const Utterance& u = transcript.utterances[i];
        out += u.speaker;
        out += ": ";
        out += u.text;
        out += " ./";
    }
    return out;
}

namespace {

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& source, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (allowed.find(it.key()) == allowed.end()) {
            throw IngestError(source + ": unknown field '" + it.key() + "' in " + where);
        }
    }
}

std::string require_string(const json& obj, const char* field, const std::string& source) {
    if (!obj.contains(field)) {
        throw IngestError(source + ": missing field '" + field + "'");
    }
    if (!obj[field].is_string()) {
        throw IngestError(source + ": field '" + field + "' must be a string");
    }
    return obj[field].get<std::string>();
}

int require_int(const json& value, const char* field, const std::string& source) {
    if (!value.is_number_integer()) {
        throw IngestError(source + ": field '" + field + "' must be an integer");
    }
    return value.get<int>();
}

GroundTruth parse_truth_block(const json& block, const std::string& source) {
    if (!block.is_object()) throw IngestError(source + ": 'truth' must be an object");
    reject_unknown_keys(block, {"phq8", "binary", "concern", "disorders"}, source, "'truth'");
    GroundTruth truth;
    if (block.contains("phq8")) truth.phq8 = require_int(block["phq8"], "phq8", source);
    if (block.contains("binary")) truth.binary = require_int(block["binary"], "binary", source);
    if (block.contains("concern")) {
        truth.concern = require_int(block["concern"], "concern", source);
    }
    if (block.contains("disorders")) {
        if (!block["disorders"].is_array()) {
            throw IngestError(source + ": field 'disorders' must be an array of strings");
        }
        std::vector<std::string> names;
        for (const json& item : block["disorders"]) {
            if (!item.is_string()) {
                throw IngestError(source + ": field 'disorders' must be an array of strings");
            }
            names.push_back(item.get<std::string>());
        }
        truth.disorders = std::move(names);
    }
    try {
        truth.validate();
    } catch (const DomainError& e) {
        throw IngestError(source + ": " + e.what());
    }
    return truth;
}

} // namespace

LoadedCase load_case_study(const std::string& json_text, const std::string& source_name) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const std::exception& e) {
        throw IngestError(source_name + ": invalid JSON: " + e.what());
    }
    if (!doc.is_object()) throw IngestError(source_name + ": document must be a JSON object");
    reject_unknown_keys(doc, {"id", "narrative", "format", "truth"}, source_name,
                        "case-study document");

    LoadedCase out;
    out.case_study.id = require_string(doc, "id", source_name);
    out.case_study.narrative = require_string(doc, "narrative", source_name);
    std::string format = require_string(doc, "format", source_name);
    try {
        out.case_study.format = case_format_from_string(format);
    } catch (const DomainError& e) {
        throw IngestError(source_name + ": " + e.what());
    }

    if (!doc.contains("truth")) throw IngestError(source_name + ": missing field 'truth'");
    out.truth = parse_truth_block(doc["truth"], source_name);
    if (!out.truth.concern) {
        throw IngestError(source_name + ": missing field 'truth.concern'");
    }
    try {
        out.case_study.validate();
    } catch (const DomainError& e) {
        throw IngestError(source_name + ": " + e.what());
    }
    return out;
}

LoadedCase load_case_study_file(const std::filesystem::path& path) {
    return load_case_study(read_text_file(path), path.string());
}

std::string_view to_string(Split split) {
    switch (split) {
    case Split::training: return "training";
    case Split::testing: return "testing";
    case Split::validation: return "validation";
    }
    return "training";
}

Split split_from_string(std::string_view s) {
    if (s == "training") return Split::training;
    if (s == "testing") return Split::testing;
    if (s == "validation") return Split::validation;
    throw DomainError("unknown split '" + std::string(s) + "'");
}

SplitSpec parse_split_file(const std::string& content, const std::string& source_name) {
    std::istringstream in(content);
    std::string line;
    size_t line_no = 0;
    bool header_seen = false;
    char delim = ',';
    SplitSpec spec;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        if (!header_seen) {
            delim = line.find('\t') != std::string::npos ? '\t' : ',';
            std::vector<std::string> cols = split_line(line, delim);
            if (cols.size() != 2 || to_lower(trim(cols[0])) != "id" ||
                to_lower(trim(cols[1])) != "split") {
                throw at_line(source_name, line_no, "header must be 'id,split'");
            }
            header_seen = true;
            continue;
        }
        std::vector<std::string> fields = split_line(line, delim);
        if (fields.size() != 2) throw at_line(source_name, line_no, "expected 2 fields");
        std::string id = trim(fields[0]);
        if (id.empty()) throw at_line(source_name, line_no, "empty id");
        Split split;
        try {
            split = split_from_string(to_lower(trim(fields[1])));
        } catch (const DomainError& e) {
            throw at_line(source_name, line_no, e.what());
        }
        if (spec.assignment.count(id) > 0) {
            throw DomainError(source_name + ": id '" + id + "' assigned to two splits");
        }
        spec.assignment[id] = split;
    }
    if (!header_seen) throw IngestError(source_name + ": no header row");
    return spec;
}

SplitSpec load_split_file(const std::filesystem::path& path) {
    return parse_split_file(read_text_file(path), path.string());
}

const DatasetCase* Dataset::find(const std::string& id) const {
    for (const DatasetCase& c : cases) {
        if (c.id == id) return &c;
    }
    return nullptr;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
    const std::string source = manifest_path.string();
    json doc;
    try {
        doc = json::parse(read_text_file(manifest_path));
    } catch (const IngestError&) {
        throw;
    } catch (const std::exception& e) {
        throw IngestError(source + ": invalid JSON: " + e.what());
    }
    if (!doc.is_object() || !doc.contains("cases") || !doc["cases"].is_array()) {
        throw IngestError(source + ": expected an object with a 'cases' array");
    }
    std::filesystem::path base = manifest_path.parent_path();

    Dataset dataset;
    std::set<std::string> seen;
    size_t index = 0;
    for (const json& entry : doc["cases"]) {
        std::string where = source + ": cases[" + std::to_string(index++) + "]";
        if (!entry.is_object()) throw IngestError(where + ": must be an object");
        reject_unknown_keys(entry, {"id", "transcript", "case_study", "input_text", "truth"},
                            where, "case entry");
        DatasetCase c;
        c.id = require_string(entry, "id", where);
        if (!seen.insert(c.id).second) {
            throw IngestError(where + ": duplicate case id '" + c.id + "'");
        }

        int sources = static_cast<int>(entry.contains("transcript")) +
                      static_cast<int>(entry.contains("case_study")) +
                      static_cast<int>(entry.contains("input_text"));
        if (sources != 1) {
            throw IngestError(where +
                              ": exactly one of 'transcript', 'case_study', 'input_text' required");
        }

        if (entry.contains("transcript")) {
            std::filesystem::path p = base / require_string(entry, "transcript", where);
            c.input_text = render_transcript(load_daic_transcript_file(p, c.id));
            if (entry.contains("truth")) c.truth = parse_truth_block(entry["truth"], where);
        } else if (entry.contains("case_study")) {
            std::filesystem::path p = base / require_string(entry, "case_study", where);
            LoadedCase loaded = load_case_study_file(p);
            if (loaded.case_study.id != c.id) {
                throw IngestError(where + ": case-study document id '" + loaded.case_study.id +
                                  "' does not match case id '" + c.id + "'");
            }
            if (entry.contains("truth")) {
                throw IngestError(where + ": 'truth' conflicts with the case-study document");
            }
            c.input_text = loaded.case_study.narrative;
            c.truth = loaded.truth;
        } else {
            c.input_text = require_string(entry, "input_text", where);
            if (entry.contains("truth")) c.truth = parse_truth_block(entry["truth"], where);
        }
        dataset.cases.push_back(std::move(c));
    }
    return dataset;
}

std::map<std::string, GroundTruth> parse_truth_map(const std::string& json_text,
                                                   const std::string& source_name) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const std::exception& e) {
        throw IngestError(source_name + ": invalid JSON: " + e.what());
    }
    if (!doc.is_object()) {
        throw IngestError(source_name + ": expected an object mapping case id to truth");
    }
    std::map<std::string, GroundTruth> out;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        out[it.key()] = parse_truth_block(it.value(), source_name + ": '" + it.key() + "'");
    }
    return out;
}

std::map<std::string, GroundTruth> load_truth_map(const std::filesystem::path& path) {
    return parse_truth_map(read_text_file(path), path.string());
}

SplitResult apply_split(const Dataset& dataset, const SplitSpec& split) {
    for (const auto& [id, part] : split.assignment) {
        (void)part;
        if (dataset.find(id) == nullptr) {
            throw DomainError("apply_split: split assigns unknown id '" + id + "'");
        }
    }
    SplitResult result;
    for (const DatasetCase& c : dataset.cases) {
        auto it = split.assignment.find(c.id);
        if (it == split.assignment.end()) {
            throw DomainError("apply_split: dataset id '" + c.id + "' missing from split");
        }
        switch (it->second) {
        case Split::training: result.training.cases.push_back(c); break;
        case Split::testing: result.testing.cases.push_back(c); break;
        case Split::validation: result.validation.cases.push_back(c); break;
        }
    }
    if (result.validation.cases.empty()) {
        result.warnings.push_back("validation split is empty");
    }
    return result;
}

} // namespace smmr
