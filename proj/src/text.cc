#include "todflow/text.h"

#include <cctype>

namespace todflow {

namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::string trim(std::string_view s) {
  size_t b = 0;
  size_t e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::string normalize_value(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

std::vector<std::string> split_top_level(std::string_view s, std::string_view sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  int depth = 0;
  char quote = 0;
  size_t start = 0;
  for (size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (quote) {
      if (c == '\\') {
        ++i;
      } else if (c == quote) {
        quote = 0;
      }
      continue;
    }
    if (c == '\'' || c == '"') {
      quote = c;
    } else if (c == '[' || c == '{' || c == '(') {
      ++depth;
    } else if (c == ']' || c == '}' || c == ')') {
      --depth;
    } else if (depth == 0 && s.compare(i, sep.size(), sep) == 0) {
      out.emplace_back(s.substr(start, i - start));
      i += sep.size() - 1;
      start = i + 1;
    }
  }
  out.emplace_back(s.substr(start));
  return out;
}

std::vector<std::string> split_lines(std::string_view s) {
  std::vector<std::string> out;
  size_t start = 0;
  while (start < s.size()) {
    size_t nl = s.find('\n', start);
    if (nl == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      break;
    }
    out.emplace_back(s.substr(start, nl - start));
    start = nl + 1;
  }
  return out;
}

std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    size_t b = i;
    while (i < s.size() && !is_space(s[i])) ++i;
    if (i > b) out.emplace_back(s.substr(b, i - b));
  }
  return out;
}

std::string normalize_utterance(std::string_view s) {
  std::string spaced;
  spaced.reserve(s.size() + 16);
  for (size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    bool punct = c == '.' || c == ',' || c == '?' || c == '!' || c == ':' || c == ';';
    if (punct && (c == '.' || c == ':' || c == ',')) {
      // keep 08:09, 16.50 and 1,000 intact
      bool digit_before = i > 0 && is_digit(s[i - 1]);
      bool digit_after = i + 1 < s.size() && is_digit(s[i + 1]);
      if (digit_before && digit_after) punct = false;
    }
    if (punct) {
      spaced += ' ';
      spaced += c;
      spaced += ' ';
    } else {
      spaced += c;
    }
  }
  return normalize_value(spaced);
}

std::optional<int> parse_clock(std::string_view s) {
  std::string t = trim(s);
  size_t colon = t.find(':');
  if (colon == std::string::npos || colon == 0 || colon > 2 || t.size() - colon != 3) return std::nullopt;
  for (size_t i = 0; i < t.size(); ++i) {
    if (i != colon && !is_digit(t[i])) return std::nullopt;
  }
  int h = std::stoi(t.substr(0, colon));
  int m = std::stoi(t.substr(colon + 1));
  if (h > 24 || m > 59) return std::nullopt;
  return h * 60 + m;
}

bool is_integer_token(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!is_digit(c)) return false;
  return true;
}

bool is_decimal_token(std::string_view s) {
  size_t dot = s.find('.');
  if (dot == std::string_view::npos || dot == 0 || dot + 1 == s.size()) return false;
  return is_integer_token(s.substr(0, dot)) && is_integer_token(s.substr(dot + 1));
}

bool is_clock_token(std::string_view s) { return parse_clock(s).has_value(); }

}  // namespace todflow
