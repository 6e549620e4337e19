#pragma once

// Line-oriented turn representation: one "<key>: <value>" line per functional
// block, a "<turn_sep>" line after every turn, and "<conversation_sep>" lines
// opening and closing each conversation.

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace todflow {

class WireFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kTurnSep = "<turn_sep>";
inline constexpr std::string_view kConversationSep = "<conversation_sep>";
inline constexpr std::string_view kUnfilled = "?";

struct SlotValue {
  std::string slot;
  std::string value;
  bool operator==(const SlotValue&) const = default;
};
using SlotPairs = std::vector<SlotValue>;

struct SlotMap {
  std::string domain;
  SlotPairs pairs;
  const std::string* find(std::string_view slot) const;
  bool operator==(const SlotMap&) const = default;
};

struct DomainPlans {
  std::string domain;
  std::vector<std::string> plans;
  bool operator==(const DomainPlans&) const = default;
};

// Opaque per-domain payload: search results and booked records are carried
// verbatim as record-literal text; db.h gives them structure.
struct DomainPayload {
  std::string domain;
  std::string payload;
  bool operator==(const DomainPayload&) const = default;
};

enum class ApiVerb { kExecute, kRetrieve };

struct ApiAction {
  std::string domain;
  std::string plan;
  ApiVerb action = ApiVerb::kExecute;
  bool operator==(const ApiAction&) const = default;
};

enum class ActStatus { kNoError, kNoBook, kNoOffer };
enum class ActType { kInform, kRequest, kRecommend, kSelect, kBook, kOfferBook, kOfferBooked };

struct DialogueAct {
  std::string domain;
  std::string plan;
  ActStatus status = ActStatus::kNoError;
  ActType act = ActType::kInform;
  std::optional<SlotPairs> slot_values;
  bool operator==(const DialogueAct&) const = default;
};

std::string_view to_string(ApiVerb v);
std::string_view to_string(ActStatus s);
std::string_view to_string(ActType a);
std::optional<ApiVerb> parse_api_verb(std::string_view s);
std::optional<ActStatus> parse_act_status(std::string_view s);
std::optional<ActType> parse_act_type(std::string_view s);

struct TurnRecord {
  std::string user_utterance;
  std::optional<std::vector<std::string>> intents;
  std::optional<SlotPairs> entities;
  std::optional<SlotPairs> all_entities;
  std::optional<std::vector<std::string>> all_domains;
  std::optional<std::vector<std::string>> domains;
  std::optional<std::vector<SlotMap>> slots_search;
  std::optional<std::vector<SlotMap>> slots_booking;
  std::optional<std::vector<DomainPayload>> slots_requestable;
  std::optional<std::vector<DomainPlans>> plans;
  std::optional<std::vector<ApiAction>> api_acts;
  std::optional<std::vector<DomainPayload>> results;
  std::optional<std::vector<DialogueAct>> dlg_acts;
  std::optional<std::string> delex;
  std::string system_response;

  bool operator==(const TurnRecord&) const = default;
};

struct ConversationRecord {
  std::string id;
  std::vector<TurnRecord> turns;
  bool operator==(const ConversationRecord&) const = default;
};

// Functional blocks in their fixed serialization order.
enum class Block {
  kUsr,
  kIntents,
  kEntities,
  kAllEntities,
  kAllDomains,
  kDomains,
  kSlotsSearch,
  kSlotsBooking,
  kSlotsRequestable,
  kPlans,
  kApiActs,
  kResults,
  kDlgActs,
  kDelex,
  kSys,
};
inline constexpr size_t kBlockCount = 15;
const std::array<Block, kBlockCount>& all_blocks();
std::string_view block_key(Block b);
// Accepts the canonical keys and the "slots_book" spelling.
std::optional<Block> block_from_key(std::string_view key);

enum class Variant { kFull, kMed, kMin };
std::string_view to_string(Variant v);
Variant parse_variant(std::string_view s);
bool variant_excludes(Variant v, Block b);

// Block-level access in rendered form. get_block returns nullopt for an
// absent block; set_block(nullopt) removes it. set_block parses and throws
// WireFormatError on malformed text.
std::optional<std::string> get_block(const TurnRecord& turn, Block b);
void set_block(TurnRecord& turn, Block b, const std::optional<std::string>& rendered);

// Grammar-level renderers/parsers for the structured block values.
std::string render_pairs(const SlotPairs& pairs);
SlotPairs parse_pairs(std::string_view text);
std::string render_slot_maps(const std::vector<SlotMap>& maps);
std::vector<SlotMap> parse_slot_maps(std::string_view text);
std::string render_plans(const std::vector<DomainPlans>& plans);
std::vector<DomainPlans> parse_plans(std::string_view text);
std::string render_api_actions(const std::vector<ApiAction>& acts);
std::vector<ApiAction> parse_api_action(std::string_view text);
std::string render_dialogue_acts(const std::vector<DialogueAct>& acts);
std::vector<DialogueAct> parse_dialogue_act(std::string_view text);
std::string render_payloads(const std::vector<DomainPayload>& payloads);
std::vector<DomainPayload> parse_payloads(std::string_view text);
// "[['Day', '?'], ['Time', '?']]"
std::string render_act_pairs(const SlotPairs& pairs);
SlotPairs parse_act_pairs(std::string_view text);

// Throws WireFormatError when the record cannot be serialized faithfully
// (embedded newlines, separators inside values, empty list elements, ...).
void validate_turn(const TurnRecord& turn);

TurnRecord apply_variant(const TurnRecord& turn, Variant variant);

std::string serialize_turn(const TurnRecord& turn, Variant variant);
// Lines of one turn, with or without its trailing <turn_sep>.
TurnRecord parse_turn(std::string_view block);

std::string serialize_conversation(const ConversationRecord& conv, Variant variant);
ConversationRecord parse_conversation(std::string_view text);
std::string serialize_conversations(const std::vector<ConversationRecord>& convs, Variant variant);
std::vector<ConversationRecord> parse_conversations(std::string_view text);

}  // namespace todflow
