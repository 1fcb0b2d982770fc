#include "smmr/experts.hpp"

#include <chrono>
#include <cstdlib>
#include <random>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include "smmr/digest.hpp"
#include "smmr/errors.hpp"
#include "smmr/util.hpp"

namespace smmr {

using nlohmann::json;

void SamplingParams::validate() const {
    if (!(temperature >= 0.0)) throw DomainError("SamplingParams: temperature must be >= 0");
    if (!(top_p > 0.0 && top_p <= 1.0)) {
        throw DomainError("SamplingParams: top_p must be in (0, 1]");
    }
}

std::string_view to_string(ExpertRole role) {
    switch (role) {
    case ExpertRole::single_step: return "single_step";
    case ExpertRole::long_context: return "long_context";
    case ExpertRole::reliable: return "reliable";
    }
    return "single_step";
}

ExpertRole expert_role_from_string(std::string_view s) {
    if (s == "single_step") return ExpertRole::single_step;
    if (s == "long_context") return ExpertRole::long_context;
    if (s == "reliable") return ExpertRole::reliable;
    throw DomainError("unknown expert role '" + std::string(s) + "'");
}

std::string_view to_string(BackendKind kind) {
    switch (kind) {
    case BackendKind::http_chat: return "http_chat";
    case BackendKind::scripted_mock: return "scripted_mock";
    }
    return "scripted_mock";
}

BackendKind backend_kind_from_string(std::string_view s) {
    if (s == "http_chat") return BackendKind::http_chat;
    if (s == "scripted_mock") return BackendKind::scripted_mock;
    throw DomainError("unknown backend kind '" + std::string(s) + "'");
}

void ExpertSpec::validate() const {
    if (expert_id.empty()) throw DomainError("ExpertSpec: expert_id must be non-empty");
    if (model_name.empty()) {
        throw DomainError("ExpertSpec '" + expert_id + "': model_name must be non-empty");
    }
    if (max_output_tokens < 1) {
        throw DomainError("ExpertSpec '" + expert_id + "': max_output_tokens must be positive");
    }
    sampling.validate();
    if (backend == BackendKind::http_chat) {
        if (endpoint_url.find("://") == std::string::npos) {
            throw DomainError("ExpertSpec '" + expert_id + "': endpoint_url must be an absolute URL");
        }
    }
}

void RetryPolicy::validate() const {
    if (budget < 0) throw DomainError("RetryPolicy: budget must be >= 0");
    if (base_delay_ms < 0 || max_delay_ms < 0) {
        throw DomainError("RetryPolicy: delays must be >= 0");
    }
}

std::string canonical_request_identity(const ExpertSpec& expert, std::string_view prompt) {
    json sampling;
    sampling["seed"] = expert.sampling.seed ? json(*expert.sampling.seed) : json(nullptr);
    sampling["temperature"] = expert.sampling.temperature;
    sampling["top_p"] = expert.sampling.top_p;

    json identity;
    identity["endpoint_url"] = expert.endpoint_url;
    identity["max_output_tokens"] = expert.max_output_tokens;
    identity["model_name"] = expert.model_name;
    identity["prompt"] = std::string(prompt);
    identity["sampling"] = sampling;
    return identity.dump();
}

std::string cache_key(const ExpertSpec& expert, std::string_view prompt) {
    return sha256_hex(canonical_request_identity(expert, prompt));
}

const MockEntry& scripted_mock_lookup(const MockScript& script, int layer_index,
                                      const std::string& input_digest) {
    auto it = script.entries.find({layer_index, input_digest});
    if (it != script.entries.end()) return it->second;
    if (script.default_entry) return *script.default_entry;
    throw ScriptMiss("no scripted response for layer " + std::to_string(layer_index) +
                     ", digest " + input_digest);
}

const std::string& scripted_mock_respond(const MockScript& script, int layer_index,
                                         const std::string& input_digest) {
    return scripted_mock_lookup(script, layer_index, input_digest).response;
}

std::filesystem::path cache_entry_path(const std::filesystem::path& cache_dir,
                                       const std::string& key) {
    return cache_dir / key.substr(0, 2) / (key + ".json");
}

ExpertClient::ExpertClient() : ExpertClient(Options{}) {}

ExpertClient::ExpertClient(Options options) : options_(std::move(options)) {
    options_.retry.validate();
}

namespace {

long long backoff_delay_ms(const RetryPolicy& retry, int attempt) {
    long long delay = retry.base_delay_ms;
    for (int i = 0; i < attempt && delay < retry.max_delay_ms; ++i) delay *= 2;
    delay = std::min<long long>(delay, retry.max_delay_ms);
    if (retry.jitter && delay > 1) {
        thread_local std::mt19937 rng{std::random_device{}()};
        std::uniform_int_distribution<long long> dist(delay / 2, delay);
        delay = dist(rng);
    }
    return delay;
}

} // namespace

std::optional<std::string> ExpertClient::cache_read(const std::string& key) const {
    if (!options_.cache_dir) return std::nullopt;
    std::filesystem::path path = cache_entry_path(*options_.cache_dir, key);
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) return std::nullopt;
    try {
        json entry = json::parse(read_text_file(path));
        if (!entry.contains("raw_text") || !entry["raw_text"].is_string()) return std::nullopt;
        return entry["raw_text"].get<std::string>();
    } catch (const std::exception&) {
        // A torn or corrupt entry is a miss; the fresh response overwrites it.
        return std::nullopt;
    }
}

void ExpertClient::cache_write(const ExpertSpec& expert, std::string_view prompt,
                               const std::string& key, const std::string& raw_text) const {
    if (!options_.cache_dir) return;
    json entry;
    entry["request"] = json::parse(canonical_request_identity(expert, prompt));
    entry["raw_text"] = raw_text;
    entry["timestamp"] = iso8601_now();
    std::filesystem::path path = cache_entry_path(*options_.cache_dir, key);
    std::filesystem::create_directories(path.parent_path());
    write_file_atomic(path, entry.dump(2) + "\n");
}

std::string ExpertClient::http_chat_once(const ExpertSpec& expert,
                                         const std::string& prompt) const {
    const char* api_key = std::getenv("SMMR_API_KEY");
    if (api_key == nullptr || *api_key == '\0') {
        throw ConfigError("SMMR_API_KEY must be set for http_chat backends");
    }

    size_t scheme_end = expert.endpoint_url.find("://");
    if (scheme_end == std::string::npos) {
        throw ConfigError("endpoint_url '" + expert.endpoint_url + "' is not an absolute URL");
    }
    size_t path_pos = expert.endpoint_url.find('/', scheme_end + 3);
    std::string base = path_pos == std::string::npos ? expert.endpoint_url
                                                     : expert.endpoint_url.substr(0, path_pos);
    std::string path = path_pos == std::string::npos ? std::string("/")
                                                     : expert.endpoint_url.substr(path_pos);

    httplib::Client client(base);
    client.set_connection_timeout(std::chrono::milliseconds(options_.request_timeout_ms));
    client.set_read_timeout(std::chrono::milliseconds(options_.request_timeout_ms));

    json body;
    body["model"] = expert.model_name;
    body["messages"] = json::array({json{{"role", "user"}, {"content", prompt}}});
    body["temperature"] = expert.sampling.temperature;
    body["top_p"] = expert.sampling.top_p;
    body["max_tokens"] = expert.max_output_tokens;
    if (expert.sampling.seed) body["seed"] = *expert.sampling.seed;

    httplib::Headers headers = {{"Authorization", std::string("Bearer ") + api_key}};
    httplib::Result res = client.Post(path, headers, body.dump(), "application/json");
    if (!res) {
        throw BackendUnavailable("transport error calling '" + expert.endpoint_url +
                                 "': " + httplib::to_string(res.error()));
    }
    if (res->status < 200 || res->status >= 300) {
        throw BackendRejected(res->status, "expert '" + expert.expert_id + "' got HTTP " +
                                               std::to_string(res->status));
    }

    json reply;
    try {
        reply = json::parse(res->body);
    } catch (const std::exception& e) {
        throw ProtocolError("response from '" + expert.endpoint_url +
                            "' is not JSON: " + e.what());
    }
    if (!reply.contains("choices") || !reply["choices"].is_array() || reply["choices"].empty()) {
        throw ProtocolError("response lacks a non-empty 'choices' array");
    }
    const json& first = reply["choices"][0];
    if (!first.contains("message") || !first["message"].contains("content") ||
        !first["message"]["content"].is_string()) {
        throw ProtocolError("response lacks choices[0].message.content text");
    }
    return first["message"]["content"].get<std::string>();
}

std::string ExpertClient::invoke_backend(const ExpertSpec& expert, const std::string& prompt,
                                         const CallContext& ctx) const {
    if (expert.backend == BackendKind::scripted_mock) {
        const MockEntry& entry =
            scripted_mock_lookup(expert.script, ctx.layer_index, sha256_hex(prompt));
        if (entry.fail) {
            throw BackendUnavailable("scripted failure for expert '" + expert.expert_id + "'");
        }
        return entry.response;
    }
    return http_chat_once(expert, prompt);
}

ExpertOutput ExpertClient::complete(const ExpertSpec& expert, const std::string& prompt,
                                    const CallContext& ctx) const {
    expert.validate();
    if (prompt.empty()) throw DomainError("complete: prompt must be non-empty");
    if (ctx.layer_index < 1) throw DomainError("complete: layer_index must be >= 1");

    auto started = std::chrono::steady_clock::now();
    ExpertOutput out;
    out.expert_id = expert.expert_id;
    out.layer_index = ctx.layer_index;
    out.input_digest = sha256_hex(prompt);

    std::string key = cache_key(expert, prompt);
    if (auto cached = cache_read(key)) {
        out.raw_text = *cached;
        out.from_cache = true;
    } else {
        int attempt = 0;
        while (true) {
            try {
                out.raw_text = invoke_backend(expert, prompt, ctx);
                break;
            } catch (const BackendUnavailable&) {
                if (attempt >= options_.retry.budget) throw;
            } catch (const BackendRejected&) {
                if (attempt >= options_.retry.budget) throw;
            }
            long long delay = backoff_delay_ms(options_.retry, attempt);
            if (delay > 0) std::this_thread::sleep_for(std::chrono::milliseconds(delay));
            ++attempt;
        }
        cache_write(expert, prompt, key, out.raw_text);
    }

    ParseRules rules = ctx.rules ? *ctx.rules : ParseRules::defaults_for(ctx.task);
    out.parsed = parse_assessment(out.raw_text, ctx.task, rules);
    out.latency_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::steady_clock::now() - started)
                         .count();
    return out;
}

} // namespace smmr
