#pragma once

#include <string>
#include <string_view>
#include <vector>

// Small ASCII text helpers shared by the parsers, the planner heuristics and
// the simworld command language.
namespace editloop {

std::string_view trim(std::string_view s);
std::string to_lower(std::string_view s);
bool iequals(std::string_view a, std::string_view b);

/// Lowercased alphanumeric/apostrophe tokens, punctuation dropped.
std::vector<std::string> words(std::string_view s);

/// Lowercase, collapse whitespace, drop trailing punctuation.
std::string normalize_text(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace editloop
