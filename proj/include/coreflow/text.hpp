#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace coreflow::text {

std::string_view trim(std::string_view s);
std::string to_lower(std::string_view s);
bool iequals(std::string_view a, std::string_view b);

/// Splits on every occurrence of `delim`; the result always has at least one element.
std::vector<std::string_view> split(std::string_view s, std::string_view delim);

/// Splits into physical lines, dropping a trailing '\r' from each.
std::vector<std::string_view> lines(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

bool starts_with_icase(std::string_view s, std::string_view prefix);

}  // namespace coreflow::text
