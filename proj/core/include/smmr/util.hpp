#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

namespace smmr {

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

// Case-insensitive search; npos when absent.
size_t find_ci(std::string_view haystack, std::string_view needle, size_t from = 0);

// UTC wall-clock time as "YYYY-MM-DDTHH:MM:SSZ".
std::string iso8601_now();

std::string read_text_file(const std::filesystem::path& path);

// Writes to a sibling temp file, then renames over the target, so readers
// never observe a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// Runs fn(0..n-1) on at most `limit` worker threads. The first exception
// thrown by any invocation is rethrown on the caller's thread after all
// workers finish.
void bounded_parallel_for(size_t n, int limit, const std::function<void(size_t)>& fn);

} // namespace smmr
