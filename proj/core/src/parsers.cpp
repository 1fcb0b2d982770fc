#include "smmr/parsers.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

#include "smmr/errors.hpp"
#include "smmr/util.hpp"

namespace smmr {

namespace {

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v';
}

// Punctuation that may sit between a label and its value ("Score: 12",
// "score - 12", "score = 12").
bool is_label_separator(char c) {
    return c == ':' || c == '=' || c == '-' || c == '*' || c == '_' ||
           c == '(' || c == ')' || c == '[' || c == ']' || c == '"' || c == '\'';
}

bool is_connective_word(std::string_view w) {
    static const char* const kWords[] = {"is", "was", "of", "at", "about", "around",
                                         "approximately", "equals", "be"};
    for (const char* k : kWords) {
        if (w.size() == std::char_traits<char>::length(k)) {
            bool eq = true;
            for (size_t i = 0; i < w.size(); ++i) {
                if (static_cast<char>(std::tolower(static_cast<unsigned char>(w[i]))) != k[i]) {
                    eq = false;
                    break;
                }
            }
            if (eq) return true;
        }
    }
    return false;
}

// Advances past whitespace, separator punctuation, and short connective
// words so that "score is: 12" and "score - 12" both reach the digits.
size_t skip_to_value(std::string_view text, size_t pos) {
    while (pos < text.size()) {
        char c = text[pos];
        // A minus glued to digits is a sign ("score: -1" must not become 1);
        // detached it is an ordinary dash separator ("score - 12").
        if (c == '-' && pos + 1 < text.size() &&
            std::isdigit(static_cast<unsigned char>(text[pos + 1]))) {
            break;
        }
        if (is_space(c) || is_label_separator(c)) {
            ++pos;
            continue;
        }
        if (std::isalpha(static_cast<unsigned char>(c))) {
            size_t end = pos;
            while (end < text.size() && end - pos < 16 &&
                   std::isalpha(static_cast<unsigned char>(text[end]))) {
                ++end;
            }
            if (is_connective_word(text.substr(pos, end - pos))) {
                pos = end;
                continue;
            }
        }
        break;
    }
    return pos;
}

// Reads a signed integer starting exactly at `pos`. The digit run must end
// at a non-alphanumeric boundary ("12." yes, "12th" no). Values too large
// for long long count as parsed but saturate out of any sensible range.
std::optional<long long> read_integer_at(std::string_view text, size_t pos) {
    size_t p = pos;
    bool neg = false;
    if (p < text.size() && (text[p] == '-' || text[p] == '+')) {
        neg = text[p] == '-';
        ++p;
    }
    size_t digits_begin = p;
    while (p < text.size() && std::isdigit(static_cast<unsigned char>(text[p]))) ++p;
    if (p == digits_begin) return std::nullopt;
    if (p < text.size() && std::isalpha(static_cast<unsigned char>(text[p]))) return std::nullopt;

    long long value = 0;
    auto [ptr, ec] = std::from_chars(text.data() + digits_begin, text.data() + p, value);
    (void)ptr;
    if (ec == std::errc::result_out_of_range) {
        value = 1000000; // far outside every task range; still "an integer"
    } else if (ec != std::errc()) {
        return std::nullopt;
    }
    return neg ? -value : value;
}

// Outcome of scanning one label occurrence.
enum class ScanState { no_label, value_found, value_bad };

struct LabeledInt {
    ScanState state = ScanState::no_label;
    long long value = 0;
};

// Finds the first occurrence (in pattern priority order, then position) of
// any label that is followed by an integer. An occurrence without a
// readable integer is skipped; the search keeps going.
LabeledInt find_labeled_integer(std::string_view text,
                                const std::vector<std::string>& patterns,
                                long long lo, long long hi) {
    for (const std::string& pattern : patterns) {
        if (pattern.empty()) continue;
        size_t from = 0;
        while (true) {
            size_t hit = find_ci(text, pattern, from);
            if (hit == std::string_view::npos) break;
            size_t value_pos = skip_to_value(text, hit + pattern.size());
            if (auto v = read_integer_at(text, value_pos)) {
                LabeledInt out;
                out.value = *v;
                out.state = (*v >= lo && *v <= hi) ? ScanState::value_found : ScanState::value_bad;
                return out;
            }
            from = hit + 1;
        }
    }
    return {};
}

bool token_is_integer(std::string_view token, long long& out) {
    // Strip surrounding punctuation so "(12)," and "12." qualify.
    size_t b = 0;
    size_t e = token.size();
    while (b < e && !std::isalnum(static_cast<unsigned char>(token[b])) && token[b] != '-' &&
           token[b] != '+') {
        ++b;
    }
    while (e > b && !std::isalnum(static_cast<unsigned char>(token[e - 1]))) --e;
    if (b >= e) return false;
    std::string_view core = token.substr(b, e - b);
    size_t p = 0;
    if (core[p] == '-' || core[p] == '+') ++p;
    if (p >= core.size()) return false;
    for (size_t i = p; i < core.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(core[i]))) return false;
    }
    auto v = read_integer_at(core, 0);
    if (!v) return false;
    out = *v;
    return true;
}

// Last standalone integer in [lo, hi]. Tokens are whitespace-delimited, so
// the "8" inside "PHQ-8" never qualifies.
std::optional<long long> last_standalone_integer(std::string_view text, long long lo,
                                                 long long hi) {
    std::optional<long long> found;
    size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        size_t start = i;
        while (i < text.size() && !is_space(text[i])) ++i;
        if (i > start) {
            long long v = 0;
            if (token_is_integer(text.substr(start, i - start), v) && v >= lo && v <= hi) {
                found = v;
            }
        }
    }
    return found;
}

// Binary answers also come as words. Returns the mapped value, or nullopt
// when the text at `pos` is not a recognizable yes/no token.
std::optional<int> read_yes_no_at(std::string_view text, size_t pos) {
    auto word_is = [&](const char* w) {
        size_t n = std::char_traits<char>::length(w);
        if (pos + n > text.size()) return false;
        for (size_t i = 0; i < n; ++i) {
            if (static_cast<char>(std::tolower(static_cast<unsigned char>(text[pos + i]))) !=
                w[i]) {
                return false;
            }
        }
        // Word boundary after the match.
        return pos + n == text.size() ||
               !std::isalpha(static_cast<unsigned char>(text[pos + n]));
    };
    if (word_is("yes")) return 1;
    if (word_is("no")) return 0;
    return std::nullopt;
}

struct LabeledBinary {
    ScanState state = ScanState::no_label;
    int value = 0;
};

LabeledBinary find_labeled_binary(std::string_view text,
                                  const std::vector<std::string>& patterns) {
    for (const std::string& pattern : patterns) {
        if (pattern.empty()) continue;
        size_t from = 0;
        while (true) {
            size_t hit = find_ci(text, pattern, from);
            if (hit == std::string_view::npos) break;
            size_t value_pos = skip_to_value(text, hit + pattern.size());
            if (auto yn = read_yes_no_at(text, value_pos)) {
                return {ScanState::value_found, *yn};
            }
            if (auto v = read_integer_at(text, value_pos)) {
                if (*v == 0 || *v == 1) return {ScanState::value_found, static_cast<int>(*v)};
                return {ScanState::value_bad, 0};
            }
            from = hit + 1;
        }
    }
    return {};
}

// Label occurrences for list-valued fields must be followed by a colon
// (optionally after spaces); plain uses of the word inside prose, like a
// disorder name ending in "disorder", never count as labels.
size_t find_list_label(std::string_view text, std::string_view pattern, size_t from,
                       size_t& content_begin) {
    while (true) {
        size_t hit = find_ci(text, pattern, from);
        if (hit == std::string_view::npos) return std::string_view::npos;
        size_t p = hit + pattern.size();
        while (p < text.size() && (text[p] == ' ' || text[p] == '\t')) ++p;
        if (p < text.size() && text[p] == ':') {
            content_begin = p + 1;
            return hit;
        }
        from = hit + 1;
    }
}

std::string trim_item(std::string_view s) {
    size_t b = 0;
    size_t e = s.size();
    while (b < e && !std::isalnum(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && !std::isalnum(static_cast<unsigned char>(s[e - 1])) && s[e - 1] != ')') --e;
    return std::string(s.substr(b, e - b));
}

bool means_no_disorders(std::string_view content) {
    std::string norm = normalize_label(content);
    // "N/A" normalizes to "n a", so both spellings are listed.
    if (norm == "none" || norm == "no disorder" || norm == "no disorders" || norm == "na" ||
        norm == "n a") {
        return true;
    }
    // "None identified.", "none detected"
    return norm.rfind("none ", 0) == 0;
}

// Splits one line of list content on commas, semicolons, and standalone
// "and". Empty pieces vanish, so "x, and y" still gives two items.
std::vector<std::string> split_disorder_list(std::string_view content) {
    std::vector<std::string> pieces;
    size_t start = 0;
    for (size_t i = 0; i <= content.size(); ++i) {
        if (i == content.size() || content[i] == ',' || content[i] == ';') {
            pieces.emplace_back(content.substr(start, i - start));
            start = i + 1;
        }
    }
    std::vector<std::string> items;
    for (const std::string& piece : pieces) {
        std::string_view rest = piece;
        while (!rest.empty()) {
            size_t cut = std::string_view::npos;
            size_t probe = 0;
            while (probe + 5 <= rest.size()) {
                size_t hit = find_ci(rest, "and", probe);
                if (hit == std::string_view::npos || hit + 3 > rest.size()) break;
                bool left_ok = hit > 0 && is_space(rest[hit - 1]);
                bool right_ok = hit + 3 < rest.size() && is_space(rest[hit + 3]);
                if (left_ok && right_ok) {
                    cut = hit;
                    break;
                }
                probe = hit + 1;
            }
            std::string_view head = cut == std::string_view::npos ? rest : rest.substr(0, cut);
            std::string item = trim_item(head);
            if (!item.empty()) items.push_back(std::move(item));
            if (cut == std::string_view::npos) break;
            rest = rest.substr(cut + 3);
        }
    }
    return items;
}

void require_task(const ParseRules& rules, Task task, const char* fn) {
    if (rules.task != task) {
        throw DomainError(std::string(fn) + ": rules built for task '" +
                          std::string(to_string(rules.task)) + "'");
    }
}

} // namespace

ParseRules ParseRules::defaults_for(Task task) {
    ParseRules r;
    r.task = task;
    switch (task) {
    case Task::phq8_regression:
        r.labeled_patterns = {"phq-8 score", "phq8 score", "score"};
        r.fallback_enabled = true;
        break;
    case Task::binary:
        r.labeled_patterns = {"label", "classification", "depressed"};
        r.fallback_enabled = false;
        break;
    case Task::concern:
        r.labeled_patterns = {"mental concern", "concern", "conclusion"};
        r.fallback_enabled = false;
        break;
    case Task::disorders:
        r.labeled_patterns = {"disorders", "diagnoses", "diagnosis", "disorder"};
        r.fallback_enabled = false;
        break;
    }
    return r;
}

void ParseRules::validate() const {
    if (labeled_patterns.empty()) {
        throw DomainError("ParseRules: labeled_patterns must not be empty");
    }
    for (const std::string& p : labeled_patterns) {
        if (trim(p).empty()) throw DomainError("ParseRules: blank labeled pattern");
    }
    if (fallback_enabled && task != Task::phq8_regression) {
        throw DomainError("ParseRules: integer fallback only applies to PHQ-8 extraction");
    }
}

std::optional<int> parse_phq8(std::string_view text) {
    return parse_phq8(text, ParseRules::defaults_for(Task::phq8_regression));
}

std::optional<int> parse_phq8(std::string_view text, const ParseRules& rules) {
    require_task(rules, Task::phq8_regression, "parse_phq8");
    LabeledInt hit = find_labeled_integer(text, rules.labeled_patterns, kPhq8Min, kPhq8Max);
    if (hit.state == ScanState::value_found) return static_cast<int>(hit.value);
    if (hit.state == ScanState::value_bad) return std::nullopt;
    if (rules.fallback_enabled) {
        if (auto v = last_standalone_integer(text, kPhq8Min, kPhq8Max)) {
            return static_cast<int>(*v);
        }
    }
    return std::nullopt;
}

std::optional<int> parse_binary(std::string_view text) {
    return parse_binary(text, ParseRules::defaults_for(Task::binary));
}

std::optional<int> parse_binary(std::string_view text, const ParseRules& rules) {
    require_task(rules, Task::binary, "parse_binary");
    LabeledBinary hit = find_labeled_binary(text, rules.labeled_patterns);
    if (hit.state == ScanState::value_found) return hit.value;
    return std::nullopt;
}

std::optional<int> parse_concern(std::string_view text) {
    return parse_concern(text, ParseRules::defaults_for(Task::concern));
}

std::optional<int> parse_concern(std::string_view text, const ParseRules& rules) {
    require_task(rules, Task::concern, "parse_concern");
    LabeledInt hit = find_labeled_integer(text, rules.labeled_patterns, 0, 2);
    if (hit.state == ScanState::value_found) return static_cast<int>(hit.value);
    return std::nullopt;
}

std::optional<std::vector<std::string>> parse_disorders(std::string_view text) {
    return parse_disorders(text, ParseRules::defaults_for(Task::disorders));
}

std::optional<std::vector<std::string>> parse_disorders(std::string_view text,
                                                        const ParseRules& rules) {
    require_task(rules, Task::disorders, "parse_disorders");
    for (const std::string& pattern : rules.labeled_patterns) {
        if (pattern.empty()) continue;
        size_t from = 0;
        while (true) {
            size_t content_begin = 0;
            size_t hit = find_list_label(text, pattern, from, content_begin);
            if (hit == std::string_view::npos) break;
            size_t line_end = text.find('\n', content_begin);
            if (line_end == std::string_view::npos) line_end = text.size();
            std::string_view content = text.substr(content_begin, line_end - content_begin);
            if (means_no_disorders(content)) return std::vector<std::string>{};
            std::vector<std::string> items = split_disorder_list(content);
            if (!items.empty()) return items;
            from = hit + 1;
        }
    }
    return std::nullopt;
}

bool is_valid_output(std::string_view text, Task task) {
    return is_valid_output(text, task, ParseRules::defaults_for(task));
}

bool is_valid_output(std::string_view text, Task task, const ParseRules& rules) {
    switch (task) {
    case Task::phq8_regression:
        return parse_phq8(text, rules).has_value();
    case Task::binary:
        return parse_binary(text, rules).has_value();
    case Task::concern:
        return parse_concern(text, rules).has_value();
    case Task::disorders:
        return parse_disorders(text, rules).has_value();
    }
    return false;
}

ParsedAssessment parse_assessment(std::string_view text, Task task) {
    return parse_assessment(text, task, ParseRules::defaults_for(task));
}

ParsedAssessment parse_assessment(std::string_view text, Task task, const ParseRules& rules) {
    require_task(rules, task, "parse_assessment");
    ParsedAssessment out;
    switch (task) {
    case Task::phq8_regression:
        out.phq8 = parse_phq8(text, rules);
        out.valid = out.phq8.has_value();
        if (out.phq8) out.binary = binarize_phq8(*out.phq8);
        break;
    case Task::binary:
        out.binary = parse_binary(text, rules);
        out.valid = out.binary.has_value();
        break;
    case Task::concern:
        out.concern = parse_concern(text, rules);
        out.valid = out.concern.has_value();
        out.disorders = parse_disorders(text);
        if (out.concern) out.binary = concern_to_binary(*out.concern);
        break;
    case Task::disorders:
        out.disorders = parse_disorders(text, rules);
        out.valid = out.disorders.has_value();
        out.concern = parse_concern(text);
        if (out.concern) out.binary = concern_to_binary(*out.concern);
        break;
    }
    return out;
}

} // namespace smmr
