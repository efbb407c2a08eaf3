#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace pairmine {

// NFC, whitespace runs collapsed to one ASCII space, trimmed. Casing kept.
std::string normalize_text(std::string_view text);

// normalize_text plus Unicode default case folding. This is the form used for
// every overlap comparison and for tokenization.
std::string normalize_for_match(std::string_view text);

// Tokens of normalize_for_match(text), split on spaces, with ASCII punctuation
// stripped from both ends of each token. Empty tokens are dropped.
std::vector<std::string> tokenize(std::string_view text);

// Code-point helpers for UTF-8 strings. Offsets past the end are clamped.
std::size_t utf8_length(std::string_view s);
std::size_t utf8_byte_offset(std::string_view s, std::size_t codepoint);
std::string utf8_substr(std::string_view s, std::size_t cp_begin, std::size_t cp_end);

bool is_ascii_punct(char c);

}  // namespace pairmine
