#pragma once

#include <string>
#include <string_view>

namespace biasrec {

// Matching normalization shared by the catalog collision check, the response
// parser and the mock's lexicon lookup: ASCII lowercase, whitespace runs
// collapsed to single spaces, spaces around '&' removed (so "Grind& Brew" and
// "Grind&Brew" compare equal), outer whitespace trimmed. Bytes outside ASCII
// pass through untouched.
std::string normalize_for_match(std::string_view text);

std::string to_lower_ascii(std::string_view text);

std::string_view trim(std::string_view text);

// Whitespace-delimited token count; the length cap on rewrites counts words.
std::size_t word_count(std::string_view text);

bool starts_with(std::string_view text, std::string_view prefix);

}  // namespace biasrec
