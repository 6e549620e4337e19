#pragma once

// The language-model contract. The engine only ever talks text to a model:
// complete() continues a wire-format prompt, log_likelihood() scores a given
// continuation. Tokenization stays behind the implementation.

#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "todflow/sampler.h"
#include "todflow/wire_format.h"

namespace todflow {

// Marker a model emits for a block it decides is not applicable this turn.
inline constexpr std::string_view kSkipToken = "<skip>";

class GeneratorError : public std::runtime_error {
 public:
  enum class Kind { kTransport, kTimeout, kContextOverflow, kUnmatched, kInvalid };
  GeneratorError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

class Generator {
 public:
  virtual ~Generator() = default;

  // Halts at the first stop sequence (excluded from the result) or after
  // max_new_tokens. Deterministic given (prompt, config).
  virtual std::string complete(std::string_view prompt, const DecodingConfig& config) = 0;

  // Sum of continuation log-probabilities; 0 for an empty continuation.
  virtual double log_likelihood(std::string_view prompt, std::string_view continuation) = 0;

  // False means single-flight: callers must not overlap requests.
  virtual bool concurrent_safe() const = 0;
  virtual std::string name() const = 0;
};

// Truncates at the earliest occurrence of any stop sequence.
std::string apply_stop_sequences(std::string text, const std::vector<std::string>& stops);
// Token = optional leading whitespace followed by a non-whitespace run.
std::string limit_tokens(std::string text, int max_new_tokens);
std::string finish_completion(std::string text, const DecodingConfig& config);

// Serializes calls into a single-flight generator.
class SerializedGenerator : public Generator {
 public:
  explicit SerializedGenerator(std::shared_ptr<Generator> inner) : inner_(std::move(inner)) {}
  std::string complete(std::string_view prompt, const DecodingConfig& config) override;
  double log_likelihood(std::string_view prompt, std::string_view continuation) override;
  bool concurrent_safe() const override { return true; }
  std::string name() const override { return inner_->name(); }

 private:
  std::shared_ptr<Generator> inner_;
  std::mutex mu_;
};

std::shared_ptr<Generator> make_concurrent(std::shared_ptr<Generator> g);

// ---- scripted test double ---------------------------------------------------

enum class MatchKind { kSuffix, kExact, kContains, kRegex };

struct PromptMatcher {
  MatchKind kind = MatchKind::kSuffix;
  std::string pattern;
  bool matches(std::string_view prompt) const;
};

struct ScriptedOutcome {
  std::string text;
  double logprob = 0.0;
};

struct ScriptRule {
  PromptMatcher when;
  // One outcome plays back deterministically; several form a known
  // distribution that the decoding strategy samples from.
  std::vector<ScriptedOutcome> outcomes;
};

struct ScoreRule {
  PromptMatcher when;
  std::string continuation;
  double score = 0.0;
};

struct Script {
  std::vector<ScriptRule> rules;
  std::vector<ScoreRule> scores;
  // Optional per-character model used when no score rule matches; scores are
  // then additive over any split of the continuation.
  std::optional<double> char_default_logprob;
  std::vector<std::pair<char, double>> char_logprobs;

  static Script from_json(const nlohmann::json& j);
  static Script load(const std::filesystem::path& path);
};

class ScriptedGenerator : public Generator {
 public:
  explicit ScriptedGenerator(Script script) : script_(std::move(script)) {}
  std::string complete(std::string_view prompt, const DecodingConfig& config) override;
  double log_likelihood(std::string_view prompt, std::string_view continuation) override;
  bool concurrent_safe() const override { return true; }
  std::string name() const override { return "scripted"; }

  // The sampling distribution the rule matching `prompt` induces.
  std::vector<double> outcome_distribution(std::string_view prompt, const DecodingConfig& config) const;

 private:
  const ScriptRule& rule_for(std::string_view prompt) const;
  Script script_;
};

// ---- gold playback ----------------------------------------------------------

// Replays gold conversations. The conversation is identified by the user
// utterances present in the prompt, the turn by their count, and the block
// by the key of the prompt's trailing partial line.
class PlaybackGenerator : public Generator {
 public:
  PlaybackGenerator(std::vector<ConversationRecord> gold, Variant variant);

  std::string complete(std::string_view prompt, const DecodingConfig& config) override;
  double log_likelihood(std::string_view prompt, std::string_view continuation) override;
  bool concurrent_safe() const override { return true; }
  std::string name() const override { return "playback"; }

  const ConversationRecord* find_conversation(const std::vector<std::string>& user_utterances) const;

 private:
  struct Position {
    const TurnRecord* gold = nullptr;
    std::string partial;  // trailing partial line ("" at a line boundary)
    std::optional<Block> last_complete;
  };
  Position locate(std::string_view prompt) const;
  // Gold text continuing `partial`, through the end of its line (with "\n").
  std::string target_after(const Position& pos) const;

  std::vector<ConversationRecord> gold_;
  Variant variant_;
};

// ---- remote model over HTTP -------------------------------------------------

struct RemoteConfig {
  std::string url;  // e.g. http://127.0.0.1:8081
  int timeout_ms = 30000;
  int max_retries = 3;
  int backoff_initial_ms = 100;
  int backoff_max_ms = 2000;
  bool concurrent = false;
};

// POST /v1/complete {prompt, strategy, k, p, temperature, max_new_tokens, stop, seed} -> {text}
// POST /v1/score {prompt, continuation} -> {log_likelihood}
class RemoteGenerator : public Generator {
 public:
  explicit RemoteGenerator(RemoteConfig config);
  std::string complete(std::string_view prompt, const DecodingConfig& config) override;
  double log_likelihood(std::string_view prompt, std::string_view continuation) override;
  bool concurrent_safe() const override { return config_.concurrent; }
  std::string name() const override { return "remote:" + config_.url; }

  static nlohmann::json complete_request(std::string_view prompt, const DecodingConfig& config);

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body);
  RemoteConfig config_;
};

}  // namespace todflow
