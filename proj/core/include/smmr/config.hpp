#pragma once

#include <filesystem>
#include <string>

#include "smmr/orchestrator.hpp"

namespace smmr {

// Digest over the canonical re-serialization of the config document, so
// whitespace and key order do not matter. Prompt template files are not
// part of the digest; their text reaches the cache keys through the
// rendered prompts.
std::string config_canonical_digest(const std::string& json_text);

// Parses a declarative pipeline configuration. Template references resolve
// against base_dir; inline "template_text" needs no file. Every violation
// is reported as ConfigError with the offending field's path.
PipelineConfig parse_pipeline_config(const std::string& json_text,
                                     const std::filesystem::path& base_dir,
                                     const std::string& source_name);

PipelineConfig load_pipeline_config(const std::filesystem::path& path);

} // namespace smmr
