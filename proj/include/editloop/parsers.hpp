#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "editloop/core.hpp"

// Structured-output parsers for model replies. Each one scans leniently for
// the first well-formed region in surrounding prose, then validates strictly.
namespace editloop {

/// First bracketed array of double-quoted strings. Throws ParseFailure when
/// none exists or an element is empty. `[]` parses to an empty list.
std::vector<std::string> parse_string_array(std::string_view text);

/// Canonical form `["a", "b"]`, escaping quotes and backslashes.
std::string serialize_string_array(const std::vector<std::string>& items);

/// Expert reply: first object holding score, negative_prompt and
/// positive_prompt. "None" as the negative maps to empty; the score is
/// clamped into [0,10] and `clamped` set when that happened.
Critique parse_critique(std::string_view text);

/// Aggregator reply: the `prompt` field of the first object holding one.
std::string parse_consensus_text(std::string_view text);

}  // namespace editloop
