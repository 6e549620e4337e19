#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace todflow {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Lowercases, trims, and collapses internal whitespace runs to one space.
std::string normalize_value(std::string_view s);

// Splits on `sep` only at bracket depth zero and outside quoted strings.
// Understands [], {}, () and Python-style '...' / "..." with backslash escapes.
std::vector<std::string> split_top_level(std::string_view s, std::string_view sep = ", ");

std::vector<std::string> split_lines(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);

// Corpus-style utterance normalization: lowercase, punctuation spaced out as
// separate tokens, whitespace collapsed. Digits keep their internal ':' and
// '.' so "08:09" and "16.50" survive as single tokens.
std::string normalize_utterance(std::string_view s);

// "HH:MM" -> minutes since midnight.
std::optional<int> parse_clock(std::string_view s);

bool is_integer_token(std::string_view s);
bool is_decimal_token(std::string_view s);
bool is_clock_token(std::string_view s);

}  // namespace todflow
