#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace affectlab::detail {

std::string_view trim(std::string_view s);
std::vector<std::string_view> split(std::string_view s, char sep);

// Whole-string parse; nullopt on trailing garbage or non-finite values.
std::optional<double> parse_double(std::string_view s);
std::optional<long long> parse_int(std::string_view s);

std::string read_file(const std::filesystem::path& path);
// Write to a sibling temp file, then rename over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace affectlab::detail
