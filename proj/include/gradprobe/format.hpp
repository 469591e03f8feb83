#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace gradprobe {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);
/// Parses a full field as a double; throws Error on trailing garbage.
double parse_double(std::string_view s);

/// Splits one CSV line on commas. Fields are never quoted in our files.
std::vector<std::string> split_csv(std::string_view line);
/// Splits text into lines, dropping a trailing empty line and any '\r'.
std::vector<std::string> split_lines(std::string_view text);

}  // namespace gradprobe
