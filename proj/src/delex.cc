#include "todflow/delex.h"

#include <algorithm>
#include <optional>

#include "todflow/text.h"

namespace todflow {

bool DelexLexicon::enabled(std::string_view kind) const {
  return std::find(inventory.begin(), inventory.end(), kind) != inventory.end();
}

std::string placeholder_for(std::string_view domain, std::string_view slot) {
  return "[" + std::string(domain) + "_" + std::string(slot) + "]";
}

bool is_placeholder(std::string_view token) {
  return token.size() > 2 && token.front() == '[' && token.back() == ']' &&
         token.find(' ') == std::string_view::npos && token.find('_') != std::string_view::npos;
}

std::vector<std::string> placeholders_in(std::string_view text) {
  std::vector<std::string> out;
  for (auto& tok : split_whitespace(text))
    if (is_placeholder(tok)) out.push_back(tok);
  return out;
}

namespace {

struct Span {
  size_t length = 0;
  std::string placeholder;
};

class Tokens {
 public:
  explicit Tokens(std::vector<std::string> toks) : toks_(std::move(toks)), spans_(toks_.size()), used_(toks_.size()) {}

  // Replaces every free occurrence of `needle`.
  void replace_all(const std::vector<std::string>& needle, const std::string& placeholder) {
    if (needle.empty() || needle.size() > toks_.size()) return;
    for (size_t i = 0; i + needle.size() <= toks_.size(); ++i) {
      bool hit = true;
      for (size_t j = 0; j < needle.size() && hit; ++j) hit = !used_[i + j] && toks_[i + j] == needle[j];
      if (!hit) continue;
      spans_[i] = Span{needle.size(), placeholder};
      for (size_t j = 0; j < needle.size(); ++j) used_[i + j] = true;
      i += needle.size() - 1;
    }
  }

  template <typename Pred>
  void replace_each(Pred pred, const std::string& placeholder) {
    for (size_t i = 0; i < toks_.size(); ++i)
      if (!used_[i] && pred(toks_[i])) {
        spans_[i] = Span{1, placeholder};
        used_[i] = true;
      }
  }

  DelexResult result() const {
    DelexResult r;
    std::vector<std::string> out;
    for (size_t i = 0; i < toks_.size();) {
      if (spans_[i]) {
        std::vector<std::string> covered(toks_.begin() + i, toks_.begin() + i + spans_[i]->length);
        r.fills.push_back({spans_[i]->placeholder, join(covered, " ")});
        out.push_back(spans_[i]->placeholder);
        i += spans_[i]->length;
      } else {
        out.push_back(toks_[i]);
        ++i;
      }
    }
    r.text = join(out, " ");
    return r;
  }

 private:
  std::vector<std::string> toks_;
  std::vector<std::optional<Span>> spans_;
  std::vector<bool> used_;
};

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

}  // namespace

DelexResult delexicalize(std::string_view response, const std::vector<DelexSource>& sources,
                         const DelexLexicon& lexicon) {
  Tokens toks(split_whitespace(normalize_utterance(response)));

  struct Needle {
    std::vector<std::string> toks;
    std::string placeholder;
  };
  std::vector<Needle> needles;
  for (const auto& s : sources) {
    std::string v = normalize_utterance(s.value);
    if (v.empty() || v == "?" || v == "none" || v == "dontcare") continue;
    needles.push_back({split_whitespace(v), placeholder_for(s.domain, s.slot)});
  }
  std::stable_sort(needles.begin(), needles.end(),
                   [](const Needle& a, const Needle& b) { return a.toks.size() > b.toks.size(); });
  for (const auto& n : needles) toks.replace_all(n.toks, n.placeholder);

  if (lexicon.enabled("value_place")) {
    std::vector<std::vector<std::string>> places;
    for (const auto& p : lexicon.places) places.push_back(split_whitespace(normalize_utterance(p)));
    std::stable_sort(places.begin(), places.end(), [](const auto& a, const auto& b) { return a.size() > b.size(); });
    for (const auto& p : places) toks.replace_all(p, "[value_place]");
  }
  if (lexicon.enabled("value_time")) toks.replace_each([](const std::string& t) { return is_clock_token(t); }, "[value_time]");
  if (lexicon.enabled("value_price"))
    toks.replace_each([](const std::string& t) { return is_decimal_token(t); }, "[value_price]");
  if (lexicon.enabled("value_count"))
    toks.replace_each(
        [&](const std::string& t) { return is_integer_token(t) && t.size() <= lexicon.max_count_digits; },
        "[value_count]");
  if (lexicon.enabled("value_day"))
    toks.replace_each([&](const std::string& t) { return contains(lexicon.days, t); }, "[value_day]");
  if (lexicon.enabled("value_area"))
    toks.replace_each([&](const std::string& t) { return contains(lexicon.areas, t); }, "[value_area]");
  return toks.result();
}

std::string relexicalize(std::string_view text, const std::vector<Fill>& fills) {
  std::vector<std::string> out;
  size_t next = 0;
  for (auto& tok : split_whitespace(text)) {
    if (next < fills.size() && tok == fills[next].placeholder) {
      out.push_back(fills[next++].text);
    } else {
      out.push_back(tok);
    }
  }
  return join(out, " ");
}

}  // namespace todflow
