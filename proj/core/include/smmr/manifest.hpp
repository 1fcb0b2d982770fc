#pragma once

#include <filesystem>
#include <string>

#include "smmr/orchestrator.hpp"

namespace smmr {

// Line-delimited JSON: one header record followed by one record per case,
// in dataset order. Timing and cache-hit details live under "volatile"
// subobjects so determinism checks can strip them mechanically.
std::string run_manifest_to_jsonl(const RunManifest& manifest);

void write_run_manifest(const std::filesystem::path& path, const RunManifest& manifest);

RunManifest parse_run_manifest(const std::string& jsonl_text, const std::string& source_name);
RunManifest load_run_manifest(const std::filesystem::path& path);

// Canonical re-serialization with every "volatile" subobject removed; two
// runs are considered identical when these texts match byte for byte.
std::string manifest_stable_text(const std::string& jsonl_text);

} // namespace smmr
