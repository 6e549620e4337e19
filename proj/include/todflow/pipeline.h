#pragma once

// Conversion of MultiWOZ-2.1-style raw dialogues into wire-format
// conversation records, plus the processed-directory layout.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "todflow/db.h"
#include "todflow/delex.h"
#include "todflow/goal.h"
#include "todflow/ontology.h"
#include "todflow/wire_format.h"

namespace todflow {

struct RawTurn {
  std::string text;
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
  nlohmann::ordered_json dialog_act = nlohmann::ordered_json::object();
  // Optional intent annotation on user turns.
  std::optional<std::vector<std::string>> intents;
};

struct RawDialogue {
  std::string id;
  nlohmann::ordered_json goal = nlohmann::ordered_json::object();
  std::vector<RawTurn> log;  // user, system, user, system, ...
};

RawDialogue parse_raw_dialogue(const std::string& id, const nlohmann::ordered_json& j);
// Reads data.json and any other dialogue files in `dir`, sorted by id.
// "valListFile"/"testListFile" (.txt or .json) assign splits.
struct RawCorpus {
  std::vector<RawDialogue> dialogues;
  std::map<std::string, std::string> split_of;  // id -> train|valid|test
};
RawCorpus load_raw_corpus(const std::filesystem::path& dir);
std::string dialogue_key(std::string_view file_name);  // strips ".json"

struct PipelineConfig {
  Variant variant = Variant::kFull;
  size_t k = 5;
  size_t max_sequence_length = 1024;
  std::uint64_t seed = 0;
  bool padding = true;
  std::vector<std::string> confirm_cues{"yes", "yeah", "sure", "book it", "please book", "that works",
                                        "sounds good", "one", "just one", "two", "three", "four", "five",
                                        "six", "seven", "eight", "<number>"};
  DelexLexicon lexicon;

  void validate() const;
};

// Overlays settings from a JSON lexicon file ("confirm_cues", "placeholders",
// "days", "areas").
void load_pipeline_settings(const std::filesystem::path& path, PipelineConfig& config);

struct Issue {
  std::string dialogue_id;
  int turn = 0;
  std::string category;
  std::string detail;
  bool operator<(const Issue& o) const;
};
std::string format_issue(const Issue& issue);

// Search and booking maps in ontology slot order; unset slots are "?".
std::pair<SlotMap, SlotMap> map_slots(const Ontology& ontology, const std::string& domain,
                                      const nlohmann::ordered_json& domain_metadata,
                                      std::vector<Issue>* issues = nullptr, const std::string& dialogue_id = "",
                                      int turn = 0);

// Source act name ("NoBook", "Inform", ...) -> (status, act). Unknown acts
// yield nullopt.
std::optional<std::pair<ActStatus, ActType>> derive_status_code(std::string_view source_act);

// Which plan a source act belongs to for `domain`.
std::string classify_act_plan(const Ontology& ontology, const std::string& domain, ActType act,
                              ActStatus status, const SlotPairs& pairs);

struct DomainActivity {
  std::string domain;
  std::vector<DialogueAct> acts;
  bool offerbook = false;
  bool nobook = false;
  size_t booked_before = 0;
  size_t booked_after = 0;
};

std::vector<ApiAction> derive_api_actions(const Ontology& ontology, const DomainActivity& activity);

// Whether this user utterance accepts a previously offered train.
bool confirm_cue(std::string_view utterance, const std::vector<std::string>& cues);

struct ConvertedDialogue {
  ConversationRecord record;
  GoalSpec goal;
  // Per turn: the values delexicalization removed, in template order.
  std::vector<std::vector<Fill>> fills;
  // Per turn: normalized original response.
  std::vector<std::string> normalized_responses;
};

ConvertedDialogue convert_dialogue(const RawDialogue& raw, const Database& db, const Ontology& ontology,
                                   const PipelineConfig& config, std::vector<Issue>& issues);

struct ConvertedCorpus {
  std::vector<ConvertedDialogue> dialogues;
  std::vector<Issue> issues;  // sorted by (dialogue id, turn)
};

ConvertedCorpus convert_corpus(const std::vector<RawDialogue>& raw, const Database& db, const Ontology& ontology,
                               const PipelineConfig& config);

// ---- training sequences -----------------------------------------------------

size_t count_tokens(std::string_view text);

// One string per training example. Short examples are padded with whole turn
// blocks of other conversations, long ones split at turn boundaries.
std::vector<std::string> emit_training_sequences(const std::vector<ConversationRecord>& records,
                                                 const PipelineConfig& config);
std::string render_training_file(const std::vector<std::string>& examples);

// ---- processed directory ----------------------------------------------------

inline const std::vector<std::string> kSplits{"train", "valid", "test"};

struct ProcessedSplit {
  std::vector<ConversationRecord> conversations;
  std::vector<GoalSpec> goals;
};

struct ProcessedData {
  Variant variant = Variant::kFull;
  size_t k = 5;
  std::uint64_t seed = 0;
  std::map<std::string, ProcessedSplit> splits;
};

// Runs the full preparation and writes
//   {train,valid,test}.conversations.txt, {train,valid}.tokens.txt,
//   {split}.meta.json, manifest.json, issues.log
ConvertedCorpus prepare_data(const std::filesystem::path& corpus_dir, const Database& db, const Ontology& ontology,
                             const PipelineConfig& config, const std::filesystem::path& out_dir);

ProcessedData load_processed(const std::filesystem::path& dir);

}  // namespace todflow
