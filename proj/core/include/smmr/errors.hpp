#pragma once

#include <stdexcept>
#include <string>

namespace smmr {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Precondition or value-domain violation (bad score range, length mismatch, ...).
class DomainError : public Error {
public:
    explicit DomainError(const std::string& what) : Error(what) {}
};

// Unresolved or unknown placeholder while rendering a prompt template.
class TemplateError : public Error {
public:
    explicit TemplateError(const std::string& what) : Error(what) {}
};

// Pipeline configuration rejected; message carries the offending field path.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(what) {}
};

// Dataset/transcript/case-study/split file rejected; message carries line or field.
class IngestError : public Error {
public:
    explicit IngestError(const std::string& what) : Error(what) {}
};

class BackendError : public Error {
public:
    explicit BackendError(const std::string& what) : Error(what) {}
};

// Transport-level failure that survived every retry.
class BackendUnavailable : public BackendError {
public:
    explicit BackendUnavailable(const std::string& what) : BackendError(what) {}
};

// Endpoint answered, but with a non-2xx status after retries.
class BackendRejected : public BackendError {
public:
    BackendRejected(int status, const std::string& what)
        : BackendError(what), status_(status) {}
    int status() const { return status_; }

private:
    int status_;
};

// Response body did not match the chat-completion wire schema.
class ProtocolError : public BackendError {
public:
    explicit ProtocolError(const std::string& what) : BackendError(what) {}
};

// Scripted mock had no entry for the requested key and no default.
class ScriptMiss : public BackendError {
public:
    explicit ScriptMiss(const std::string& what) : BackendError(what) {}
};

// Every expert of a layer failed for one case.
class AllExpertsFailed : public Error {
public:
    explicit AllExpertsFailed(const std::string& what) : Error(what) {}
};

// The consolidation model failed for one case after retries.
class FinalLayerFailed : public Error {
public:
    explicit FinalLayerFailed(const std::string& what) : Error(what) {}
};

} // namespace smmr
