#pragma once

// Delexicalization of system responses into slot-placeholder templates and
// the inverse fill.

#include <string>
#include <string_view>
#include <vector>

namespace todflow {

// Typed [value_*] matchers. Which ones run is configuration.
struct DelexLexicon {
  std::vector<std::string> inventory{"value_place", "value_time", "value_price", "value_count", "value_day",
                                     "value_area"};
  std::vector<std::string> days{"monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"};
  std::vector<std::string> areas{"centre", "north", "south", "east", "west"};
  std::vector<std::string> places;  // usually filled from the train database
  size_t max_count_digits = 4;

  bool enabled(std::string_view kind) const;
};

// A known value to replace with [domain_slot].
struct DelexSource {
  std::string domain;
  std::string slot;
  std::string value;
};

struct Fill {
  std::string placeholder;  // "[train_reference]"
  std::string text;         // normalized span it replaced
  bool operator==(const Fill&) const = default;
};

struct DelexResult {
  std::string text;
  std::vector<Fill> fills;  // in template order
};

std::string placeholder_for(std::string_view domain, std::string_view slot);
bool is_placeholder(std::string_view token);
// Placeholders in order of appearance, e.g. {"[value_time]", "[train_id]"}.
std::vector<std::string> placeholders_in(std::string_view text);

// Source values replace first (longest match first, token boundaries only);
// typed matchers then run over what is left. Output is normalized.
DelexResult delexicalize(std::string_view response, const std::vector<DelexSource>& sources,
                         const DelexLexicon& lexicon);

// Puts fills back in order; leaves placeholders without a fill untouched.
std::string relexicalize(std::string_view text, const std::vector<Fill>& fills);

}  // namespace todflow
