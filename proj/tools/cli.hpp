#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace smmr::cli {

// Exit codes shared by every subcommand: 0 success, 2 invalid
// configuration, paths, or alignment, 3 backend hard failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitBackend = 3;

struct RunArgs {
    std::string config_path;
    std::string dataset_path;
    std::string out_path;
    std::optional<int> parallelism;
    std::optional<std::string> cache_dir;
    bool no_cache = false;
    std::optional<std::string> split_path;
    std::optional<std::string> subset;
};

int cmd_run(const RunArgs& args, std::ostream& out, std::ostream& err);

struct EvalArgs {
    std::string manifest_path;
    std::string truth_path;
    std::optional<std::string> task;
    std::optional<std::string> config_path;
    std::optional<std::string> synonyms_path;
    std::optional<std::string> out_path;
    std::optional<std::string> split_path;
    std::optional<std::string> subset;
};

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);

struct CompareArgs {
    std::optional<std::string> baseline_path;
    std::optional<std::string> enhanced_path;
    std::optional<std::string> truth_path;
    std::optional<std::string> synonyms_path;
    std::optional<std::string> prebaked_path;
};

int cmd_compare(const CompareArgs& args, std::ostream& out, std::ostream& err);

// Full argv-style entry point (without the program name).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace smmr::cli
