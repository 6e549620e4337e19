#include "todflow/generator.h"

#include <cctype>
#include <fstream>

#include "todflow/text.h"

namespace todflow {

std::string apply_stop_sequences(std::string text, const std::vector<std::string>& stops) {
  size_t cut = std::string::npos;
  for (const auto& s : stops) {
    if (s.empty()) continue;
    size_t p = text.find(s);
    if (p < cut) cut = p;
  }
  if (cut != std::string::npos) text.resize(cut);
  return text;
}

std::string limit_tokens(std::string text, int max_new_tokens) {
  if (max_new_tokens <= 0) return {};
  auto space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  int tokens = 0;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && space(text[i])) ++i;
    if (i == text.size()) break;
    while (i < text.size() && !space(text[i])) ++i;
    if (++tokens == max_new_tokens) {
      text.resize(i);
      break;
    }
  }
  return text;
}

std::string finish_completion(std::string text, const DecodingConfig& config) {
  return limit_tokens(apply_stop_sequences(std::move(text), config.stop_sequences), config.max_new_tokens);
}

std::string SerializedGenerator::complete(std::string_view prompt, const DecodingConfig& config) {
  std::lock_guard<std::mutex> lock(mu_);
  return inner_->complete(prompt, config);
}

double SerializedGenerator::log_likelihood(std::string_view prompt, std::string_view continuation) {
  std::lock_guard<std::mutex> lock(mu_);
  return inner_->log_likelihood(prompt, continuation);
}

std::shared_ptr<Generator> make_concurrent(std::shared_ptr<Generator> g) {
  if (g->concurrent_safe()) return g;
  return std::make_shared<SerializedGenerator>(std::move(g));
}

// ---- scripted ---------------------------------------------------------------

bool PromptMatcher::matches(std::string_view prompt) const {
  switch (kind) {
    case MatchKind::kSuffix: return prompt.ends_with(pattern);
    case MatchKind::kExact: return prompt == pattern;
    case MatchKind::kContains: return prompt.find(pattern) != std::string_view::npos;
    case MatchKind::kRegex: return std::regex_search(prompt.begin(), prompt.end(), std::regex(pattern));
  }
  return false;
}

namespace {

PromptMatcher matcher_from_json(const nlohmann::json& j) {
  PromptMatcher m;
  std::string kind = j.value("match", std::string("suffix"));
  if (kind == "suffix") m.kind = MatchKind::kSuffix;
  else if (kind == "exact") m.kind = MatchKind::kExact;
  else if (kind == "contains") m.kind = MatchKind::kContains;
  else if (kind == "regex") m.kind = MatchKind::kRegex;
  else throw GeneratorError(GeneratorError::Kind::kInvalid, "unknown match kind '" + kind + "'");
  m.pattern = j.value("prompt", std::string());
  return m;
}

}  // namespace

Script Script::from_json(const nlohmann::json& j) {
  Script s;
  const auto rules = j.value("rules", nlohmann::json::array());
  for (const auto& rj : rules) {
    ScriptRule r;
    r.when = matcher_from_json(rj);
    if (rj.contains("outcomes")) {
      for (const auto& oj : rj["outcomes"]) r.outcomes.push_back({oj.at("text"), oj.value("logprob", 0.0)});
    } else {
      r.outcomes.push_back({rj.at("continuation").get<std::string>(), 0.0});
    }
    if (r.outcomes.empty()) throw GeneratorError(GeneratorError::Kind::kInvalid, "script rule without outcomes");
    s.rules.push_back(std::move(r));
  }
  const auto scores = j.value("scores", nlohmann::json::array());
  for (const auto& sj : scores)
    s.scores.push_back({matcher_from_json(sj), sj.at("continuation").get<std::string>(), sj.at("score").get<double>()});
  if (j.contains("char_model")) {
    const auto& cm = j["char_model"];
    s.char_default_logprob = cm.value("default", -1.0);
    const auto chars = cm.value("chars", nlohmann::json::object());
    for (const auto& [k, v] : chars.items())
      if (k.size() == 1) s.char_logprobs.emplace_back(k[0], v.get<double>());
  }
  return s;
}

Script Script::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw GeneratorError(GeneratorError::Kind::kInvalid, "cannot open script: " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw GeneratorError(GeneratorError::Kind::kInvalid, std::string("malformed script: ") + e.what());
  }
}

const ScriptRule& ScriptedGenerator::rule_for(std::string_view prompt) const {
  for (const auto& r : script_.rules)
    if (r.when.matches(prompt)) return r;
  std::string tail(prompt.substr(prompt.size() > 80 ? prompt.size() - 80 : 0));
  throw GeneratorError(GeneratorError::Kind::kUnmatched, "no scripted continuation for prompt ending '" + tail + "'");
}

std::vector<double> ScriptedGenerator::outcome_distribution(std::string_view prompt,
                                                            const DecodingConfig& config) const {
  const ScriptRule& r = rule_for(prompt);
  std::vector<double> logits;
  for (const auto& o : r.outcomes) logits.push_back(o.logprob);
  return filtered_distribution(logits, config);
}

std::string ScriptedGenerator::complete(std::string_view prompt, const DecodingConfig& config) {
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw GeneratorError(GeneratorError::Kind::kInvalid, e.what());
  }
  if (prompt.empty()) throw GeneratorError(GeneratorError::Kind::kInvalid, "empty prompt");
  const ScriptRule& r = rule_for(prompt);
  size_t pick = 0;
  if (r.outcomes.size() > 1) {
    std::vector<double> logits;
    for (const auto& o : r.outcomes) logits.push_back(o.logprob);
    std::mt19937_64 rng(config.seed);
    pick = sample_index(logits, config, rng);
  }
  return finish_completion(r.outcomes[pick].text, config);
}

double ScriptedGenerator::log_likelihood(std::string_view prompt, std::string_view continuation) {
  if (continuation.empty()) return 0.0;
  for (const auto& s : script_.scores)
    if (s.continuation == continuation && s.when.matches(prompt)) return s.score;
  if (script_.char_default_logprob) {
    double total = 0.0;
    for (char c : continuation) {
      double lp = *script_.char_default_logprob;
      for (const auto& [ch, v] : script_.char_logprobs)
        if (ch == c) lp = v;
      total += lp;
    }
    return total;
  }
  throw GeneratorError(GeneratorError::Kind::kUnmatched,
                       "no scripted score for continuation '" + std::string(continuation) + "'");
}

// ---- playback ---------------------------------------------------------------

PlaybackGenerator::PlaybackGenerator(std::vector<ConversationRecord> gold, Variant variant)
    : gold_(std::move(gold)), variant_(variant) {
  for (auto& c : gold_)
    for (auto& t : c.turns) t = apply_variant(t, variant_);
}

const ConversationRecord* PlaybackGenerator::find_conversation(const std::vector<std::string>& users) const {
  for (const auto& c : gold_) {
    if (c.turns.size() < users.size()) continue;
    bool ok = true;
    for (size_t i = 0; i < users.size() && ok; ++i) ok = c.turns[i].user_utterance == users[i];
    if (ok) return &c;
  }
  return nullptr;
}

PlaybackGenerator::Position PlaybackGenerator::locate(std::string_view prompt) const {
  Position pos;
  size_t last_nl = prompt.rfind('\n');
  std::string_view complete_part = last_nl == std::string_view::npos ? std::string_view() : prompt.substr(0, last_nl);
  pos.partial = std::string(last_nl == std::string_view::npos ? prompt : prompt.substr(last_nl + 1));

  std::vector<std::string> users;
  std::optional<Block> last;
  for (const auto& line : split_lines(complete_part)) {
    if (line == kTurnSep || line == kConversationSep) {
      last.reset();
      continue;
    }
    size_t colon = line.find(": ");
    if (colon == std::string::npos) continue;
    auto b = block_from_key(line.substr(0, colon));
    if (!b) continue;
    if (*b == Block::kUsr) users.push_back(line.substr(colon + 2));
    last = b;
  }
  if (users.empty())
    throw GeneratorError(GeneratorError::Kind::kUnmatched, "playback prompt carries no user utterance");
  const ConversationRecord* c = find_conversation(users);
  if (!c) throw GeneratorError(GeneratorError::Kind::kUnmatched, "no gold conversation matches the prompt");
  pos.gold = &c->turns[users.size() - 1];
  pos.last_complete = last;
  return pos;
}

std::string PlaybackGenerator::target_after(const Position& pos) const {
  if (pos.partial.empty()) {
    size_t start = pos.last_complete ? static_cast<size_t>(*pos.last_complete) + 1 : 0;
    for (size_t i = start; i < kBlockCount; ++i) {
      auto b = static_cast<Block>(i);
      if (auto v = get_block(*pos.gold, b)) return std::string(block_key(b)) + ": " + *v + "\n";
    }
    return std::string(kTurnSep) + "\n";
  }
  size_t colon = pos.partial.find(':');
  auto b = colon == std::string::npos ? std::nullopt : block_from_key(pos.partial.substr(0, colon));
  if (!b) throw GeneratorError(GeneratorError::Kind::kUnmatched, "unrecognized partial line '" + pos.partial + "'");
  std::string head = pos.partial.substr(0, colon + 1);
  std::string value_part = pos.partial.substr(colon + 1);
  if (!value_part.empty() && value_part[0] == ' ') {
    head += ' ';
    value_part.erase(0, 1);
  }
  auto gold = get_block(*pos.gold, *b);
  if (!gold) return value_part.empty() ? std::string(kSkipToken) + "\n" : std::string("\n");
  std::string gold_line = head + *gold;
  if (gold_line.compare(0, pos.partial.size(), pos.partial) == 0 && gold_line.size() >= pos.partial.size())
    return gold_line.substr(pos.partial.size()) + "\n";
  // The partial line diverged from gold (an override or a different earlier
  // choice); resynchronize on the slot name being filled.
  if (!pos.partial.empty() && pos.partial.back() == ':') {
    size_t start = pos.partial.rfind(", ");
    start = start == std::string::npos ? head.size() : start + 2;
    std::string slot = pos.partial.substr(start);
    for (const std::string& lead : {std::string(", "), std::string(" ")}) {
      size_t at = gold_line.find(lead + slot);
      if (at != std::string::npos) return gold_line.substr(at + lead.size() + slot.size()) + "\n";
    }
  }
  throw GeneratorError(GeneratorError::Kind::kUnmatched, "gold continuation unavailable for '" + pos.partial + "'");
}

std::string PlaybackGenerator::complete(std::string_view prompt, const DecodingConfig& config) {
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw GeneratorError(GeneratorError::Kind::kInvalid, e.what());
  }
  return finish_completion(target_after(locate(prompt)), config);
}

double PlaybackGenerator::log_likelihood(std::string_view prompt, std::string_view continuation) {
  if (continuation.empty()) return 0.0;
  std::string target = target_after(locate(prompt));
  double score = 0.0;
  for (size_t i = 0; i < continuation.size(); ++i)
    if (i >= target.size() || continuation[i] != target[i]) score -= 1.0;
  return score;
}

}  // namespace todflow
