#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "smmr/parsers.hpp"
#include "smmr/types.hpp"

namespace smmr {

struct SamplingParams {
    double temperature = 0.0;
    double top_p = 1.0;
    std::optional<long long> seed;

    void validate() const;
};

enum class ExpertRole { single_step, long_context, reliable };
enum class BackendKind { http_chat, scripted_mock };

std::string_view to_string(ExpertRole role);
ExpertRole expert_role_from_string(std::string_view s);
std::string_view to_string(BackendKind kind);
BackendKind backend_kind_from_string(std::string_view s);

struct MockEntry {
    std::string response;
    bool fail = false; // simulate a hard backend failure instead of answering
};

// Deterministic stand-in for a model: responses keyed by (layer index,
// digest of the rendered prompt), with an optional catch-all.
struct MockScript {
    std::map<std::pair<int, std::string>, MockEntry> entries;
    std::optional<MockEntry> default_entry;
};

struct ExpertSpec {
    std::string expert_id;
    ExpertRole role = ExpertRole::single_step;
    BackendKind backend = BackendKind::scripted_mock;
    std::string model_name;
    std::string endpoint_url; // http_chat only
    SamplingParams sampling;
    int max_output_tokens = 512;
    MockScript script; // scripted_mock only

    void validate() const;
};

struct ExpertOutput {
    std::string expert_id;
    int layer_index = 1;
    std::string input_digest; // digest of the exact prompt sent
    std::string raw_text;     // verbatim, never trimmed or re-encoded
    ParsedAssessment parsed;
    long long latency_ms = 0;
    bool from_cache = false;
};

struct RetryPolicy {
    int budget = 3; // retries after the first attempt
    int base_delay_ms = 100;
    int max_delay_ms = 2000;
    bool jitter = true;

    void validate() const;
};

// Exact canonical JSON the cache key is derived from. Field order and number
// formatting are part of the contract; tests pin a full example.
std::string canonical_request_identity(const ExpertSpec& expert, std::string_view prompt);

std::string cache_key(const ExpertSpec& expert, std::string_view prompt);

// Looks up the scripted response; specific entry wins over the default.
// Missing key with no default throws ScriptMiss.
const MockEntry& scripted_mock_lookup(const MockScript& script, int layer_index,
                                      const std::string& input_digest);
const std::string& scripted_mock_respond(const MockScript& script, int layer_index,
                                         const std::string& input_digest);

struct CallContext {
    int layer_index = 1;
    Task task = Task::phq8_regression;
    const ParseRules* rules = nullptr; // null means defaults for the task
};

// One client serves every expert in a run. Thread-safe for concurrent
// complete() calls; the cache uses atomic file writes so concurrent writers
// of the same key are harmless.
class ExpertClient {
public:
    struct Options {
        std::optional<std::filesystem::path> cache_dir;
        RetryPolicy retry;
        int request_timeout_ms = 120000;
    };

    ExpertClient();
    explicit ExpertClient(Options options);

    // Returns the expert's response with the cache consulted first. Throws
    // BackendUnavailable / BackendRejected after the retry budget runs out,
    // ProtocolError on malformed response bodies, ScriptMiss on uncovered
    // mock inputs, ConfigError when http_chat credentials are absent.
    ExpertOutput complete(const ExpertSpec& expert, const std::string& prompt,
                          const CallContext& ctx = {}) const;

    const Options& options() const { return options_; }

private:
    std::optional<std::string> cache_read(const std::string& key) const;
    void cache_write(const ExpertSpec& expert, std::string_view prompt, const std::string& key,
                     const std::string& raw_text) const;
    std::string invoke_backend(const ExpertSpec& expert, const std::string& prompt,
                               const CallContext& ctx) const;
    std::string http_chat_once(const ExpertSpec& expert, const std::string& prompt) const;

    Options options_;
};

// Path of the cache entry for a key: <cache_dir>/<first-2-hex>/<key>.json
std::filesystem::path cache_entry_path(const std::filesystem::path& cache_dir,
                                       const std::string& key);

} // namespace smmr
