#pragma once

// Turn-by-turn execution of the block graph: stage 1 generation up to the
// API actions, the backend call, stage 2 generation of acts, template and
// response. Gold blocks stand in for generation depending on the mode.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "todflow/db.h"
#include "todflow/generator.h"
#include "todflow/grounded.h"
#include "todflow/ontology.h"
#include "todflow/wire_format.h"

namespace todflow {

enum class Mode { kEndToEnd, kContextState, kContextResult };
std::string_view to_string(Mode m);
// Accepts END_TO_END / CONTEXT_STATE / CONTEXT_RESULT and e2e / ctx-state / ctx-result.
Mode parse_mode(std::string_view s);

enum class Provenance { kGenerated, kOverridden, kGold, kBackend };
std::string_view to_string(Provenance p);

enum class MismatchPolicy { kReplaceWithComputed, kKeepGenerated };
// kFallback lexicalizes the template when the generated response is empty.
enum class ResponsePolicy { kGenerate, kFallback, kLexicalize };

struct SlotDistribution {
  std::string domain;
  std::string slot;
  Selection selection;
};

struct BlockTrace {
  Block block = Block::kUsr;
  std::string value;
  Provenance provenance = Provenance::kGenerated;
  std::vector<SlotDistribution> distributions;
};

struct VerificationFailure {
  Block block = Block::kUsr;
  std::string kind;  // all_entities_mismatch, unknown_domain, invalid_value, backend_error, ...
  std::string detail;
  std::optional<std::string> generated;
  std::optional<std::string> computed;
};

struct TurnTrace {
  size_t index = 0;
  Mode mode = Mode::kEndToEnd;
  std::vector<BlockTrace> blocks;  // present blocks in block order
  std::vector<Block> skipped;
  std::vector<VerificationFailure> failures;
  std::string lexicalized;
  std::vector<std::string> unresolved;
  bool template_divergence = false;
  double stage1_ms = 0, backend_ms = 0, stage2_ms = 0;
  // Set when the turn was aborted; blocks then hold the partial trace.
  std::optional<std::string> error;
  std::optional<GeneratorError::Kind> generator_error;

  const BlockTrace* find(Block b) const;
  TurnRecord record() const;
  std::string response() const;
};

nlohmann::json trace_to_json(const TurnTrace& trace, Variant variant);

class OverrideError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Block -> rendered value; "" forces a skip.
using Overrides = std::map<Block, std::string>;
// Rejects unknown keys, usr and results, and values that do not parse.
Overrides parse_overrides(const nlohmann::json& j);
void check_overrides(const Overrides& o);

SlotPairs update_all_entities(const SlotPairs& prev, const SlotPairs& fresh);
std::vector<std::string> update_all_domains(const std::vector<std::string>& prev,
                                            const std::vector<std::string>& fresh);

struct Lexicalized {
  std::string text;
  std::vector<std::string> unresolved;
};

// Fills [domain_slot] and [value_*] placeholders from dialogue acts, then
// results, then the belief state.
Lexicalized lexicalize(const std::string& delex, const std::vector<DialogueAct>& dlg_acts,
                       const std::vector<DomainPayload>& results, const TurnRecord& state,
                       const Ontology& ontology);
// True when the response differs from the template outside placeholder spans.
bool diverges_from_template(const std::string& delex, const std::string& response);

struct FlowConfig {
  Variant variant = Variant::kFull;
  Mode mode = Mode::kEndToEnd;
  DecodingConfig decoding{};
  size_t k = 5;
  std::uint64_t seed = 0;
  MismatchPolicy mismatch = MismatchPolicy::kReplaceWithComputed;
  ResponsePolicy response = ResponsePolicy::kGenerate;
  bool grounded_slots = false;
  double grounded_temperature = 1.0;
  SelectMode grounded_mode = SelectMode::kArgmax;

  FlowConfig();
};

// One dialogue. Not thread-safe; callers serialize turns.
class Session {
 public:
  Session(std::shared_ptr<Generator> generator, const Database& db, const Ontology& ontology, FlowConfig config);

  // gold is required for the context modes. Aborted turns are returned but
  // not committed.
  TurnTrace step(const std::string& utterance, Mode mode, const Overrides& overrides = {},
                 const TurnRecord* gold = nullptr);
  TurnTrace step(const std::string& utterance, const Overrides& overrides = {}, const TurnRecord* gold = nullptr) {
    return step(utterance, config_.mode, overrides, gold);
  }

  // Re-executes turn t from its first overridden block; later turns are
  // dropped.
  TurnTrace rerun(size_t t, const Overrides& overrides);

  const std::vector<TurnTrace>& history() const { return history_; }
  const FlowConfig& config() const { return config_; }
  const BookingLedger& ledger() const { return ledger_; }
  // Full previous-turn block values, including variant-excluded ones.
  const TurnRecord& memory() const { return memory_; }

 private:
  struct Snapshot {
    TurnRecord memory;
    BookingLedger ledger;
    ReferenceGenerator refs{0};
    std::string prompt_history;
    BookingLedger ledger_after_backend;
    ReferenceGenerator refs_after_backend{0};
  };
  struct TurnInput {
    std::string utterance;
    Mode mode;
    std::optional<TurnRecord> gold;
  };
  struct Preset {
    std::map<Block, BlockTrace> blocks;
    std::vector<Block> skipped;
    Block until = Block::kUsr;  // presets apply to blocks before this one
    bool active = false;
  };

  struct Outcome {
    TurnTrace trace;
    TurnRecord full;
    BookingLedger ledger;
    ReferenceGenerator refs{0};
  };

  Outcome run_turn(size_t index, const TurnInput& in, const Overrides& overrides, const Preset& preset,
                   Snapshot& snap);
  void commit(Outcome& out, TurnInput in, Snapshot snap);

  std::shared_ptr<Generator> gen_;
  const Database& db_;
  const Ontology& ontology_;
  FlowConfig config_;

  TurnRecord memory_;
  BookingLedger ledger_;
  ReferenceGenerator refs_;
  std::string prompt_history_;
  std::vector<TurnTrace> history_;
  std::vector<TurnInput> inputs_;
  std::vector<Snapshot> snapshots_;
};

// Feeds gold user utterances in order, injecting gold blocks per mode.
std::vector<TurnTrace> replay(const ConversationRecord& gold, Mode mode, std::shared_ptr<Generator> generator,
                              const Database& db, const Ontology& ontology, const FlowConfig& config);

}  // namespace todflow
