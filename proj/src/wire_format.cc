#include "todflow/wire_format.h"

#include <set>

#include "todflow/pyliteral.h"
#include "todflow/text.h"

namespace todflow {

namespace {

constexpr std::string_view kDomainPrefix = "domain:";

const std::array<std::string_view, kBlockCount> kKeys = {
    "usr",     "intents",  "entities", "all_entities", "all_domains", "domains", "slots_search", "slots_booking",
    "slots_requestable", "plans", "api_acts", "results", "dlg_acts", "delex", "sys"};

[[noreturn]] void fail(const std::string& what) { throw WireFormatError(what); }

// Plain ", " split: entity and slot values may hold apostrophes, so this
// must not be quote-aware.
std::vector<std::string> split_plain(std::string_view s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  size_t start = 0;
  while (true) {
    size_t p = s.find(", ", start);
    if (p == std::string_view::npos) {
      out.emplace_back(s.substr(start));
      break;
    }
    out.emplace_back(s.substr(start, p - start));
    start = p + 2;
  }
  return out;
}

std::vector<std::string> parse_list(std::string_view text) {
  auto items = split_plain(text);
  for (const auto& i : items)
    if (i.empty()) fail("empty list element in '" + std::string(text) + "'");
  return items;
}

SlotValue parse_pair(std::string_view piece) {
  size_t colon = piece.find(':');
  if (colon == std::string_view::npos || colon == 0) fail("malformed slot pair '" + std::string(piece) + "'");
  return {std::string(piece.substr(0, colon)), std::string(piece.substr(colon + 1))};
}

bool starts_with_domain(std::string_view piece) { return piece.substr(0, kDomainPrefix.size()) == kDomainPrefix; }

std::string domain_of(std::string_view piece) {
  std::string d(piece.substr(kDomainPrefix.size()));
  if (d.empty()) fail("empty domain label");
  return d;
}

void check_text(std::string_view what, std::string_view s) {
  if (s.find('\n') != std::string_view::npos || s.find('\r') != std::string_view::npos)
    fail(std::string(what) + " contains a line break");
}

void check_atom(std::string_view what, std::string_view s) {
  check_text(what, s);
  if (s.empty()) fail(std::string(what) + " is empty");
  if (s.find(", ") != std::string_view::npos) fail(std::string(what) + " contains ', '");
}

void check_key(std::string_view what, std::string_view s) {
  check_atom(what, s);
  if (s.find(':') != std::string_view::npos) fail(std::string(what) + " contains ':'");
}

void check_pairs(const SlotPairs& pairs) {
  std::set<std::string> seen;
  for (const auto& p : pairs) {
    check_key("slot name", p.slot);
    check_text("slot value", p.value);
    if (p.value.find(", ") != std::string::npos) fail("slot value contains ', '");
    if (starts_with_domain(p.slot + ":")) fail("slot named 'domain'");
  }
}

}  // namespace

const std::string* SlotMap::find(std::string_view slot) const {
  for (const auto& p : pairs)
    if (p.slot == slot) return &p.value;
  return nullptr;
}

std::string_view to_string(ApiVerb v) { return v == ApiVerb::kExecute ? "execute" : "retrieve"; }

std::string_view to_string(ActStatus s) {
  switch (s) {
    case ActStatus::kNoError: return "noerror";
    case ActStatus::kNoBook: return "nobook";
    case ActStatus::kNoOffer: return "nooffer";
  }
  return "noerror";
}

std::string_view to_string(ActType a) {
  switch (a) {
    case ActType::kInform: return "inform";
    case ActType::kRequest: return "request";
    case ActType::kRecommend: return "recommend";
    case ActType::kSelect: return "select";
    case ActType::kBook: return "book";
    case ActType::kOfferBook: return "offerbook";
    case ActType::kOfferBooked: return "offerbooked";
  }
  return "inform";
}

std::optional<ApiVerb> parse_api_verb(std::string_view s) {
  if (s == "execute") return ApiVerb::kExecute;
  if (s == "retrieve") return ApiVerb::kRetrieve;
  return std::nullopt;
}

std::optional<ActStatus> parse_act_status(std::string_view s) {
  if (s == "noerror") return ActStatus::kNoError;
  if (s == "nobook") return ActStatus::kNoBook;
  if (s == "nooffer") return ActStatus::kNoOffer;
  return std::nullopt;
}

std::optional<ActType> parse_act_type(std::string_view s) {
  for (ActType a : {ActType::kInform, ActType::kRequest, ActType::kRecommend, ActType::kSelect, ActType::kBook,
                    ActType::kOfferBook, ActType::kOfferBooked})
    if (to_string(a) == s) return a;
  return std::nullopt;
}

const std::array<Block, kBlockCount>& all_blocks() {
  static const std::array<Block, kBlockCount> blocks = [] {
    std::array<Block, kBlockCount> b{};
    for (size_t i = 0; i < kBlockCount; ++i) b[i] = static_cast<Block>(i);
    return b;
  }();
  return blocks;
}

std::string_view block_key(Block b) { return kKeys[static_cast<size_t>(b)]; }

std::optional<Block> block_from_key(std::string_view key) {
  if (key == "slots_book") return Block::kSlotsBooking;
  for (size_t i = 0; i < kBlockCount; ++i)
    if (kKeys[i] == key) return static_cast<Block>(i);
  return std::nullopt;
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kFull: return "FULL";
    case Variant::kMed: return "MED";
    case Variant::kMin: return "MIN";
  }
  return "FULL";
}

Variant parse_variant(std::string_view s) {
  std::string u = to_lower(s);
  if (u == "full") return Variant::kFull;
  if (u == "med") return Variant::kMed;
  if (u == "min") return Variant::kMin;
  fail("unknown dataset variant '" + std::string(s) + "'");
}

bool variant_excludes(Variant v, Block b) {
  if (v == Variant::kFull) return false;
  if (b == Block::kAllEntities || b == Block::kAllDomains) return true;
  return v == Variant::kMin && b == Block::kPlans;
}

// ---- grammar renderers / parsers -----------------------------------------

std::string render_pairs(const SlotPairs& pairs) {
  std::string out;
  for (size_t i = 0; i < pairs.size(); ++i) {
    if (i) out += ", ";
    out += pairs[i].slot;
    out += ':';
    out += pairs[i].value;
  }
  return out;
}

SlotPairs parse_pairs(std::string_view text) {
  SlotPairs out;
  for (const auto& piece : split_plain(text)) out.push_back(parse_pair(piece));
  return out;
}

std::string render_slot_maps(const std::vector<SlotMap>& maps) {
  std::vector<std::string> parts;
  for (const auto& m : maps) {
    parts.push_back(std::string(kDomainPrefix) + m.domain);
    for (const auto& p : m.pairs) parts.push_back(p.slot + ":" + p.value);
  }
  return join(parts, ", ");
}

std::vector<SlotMap> parse_slot_maps(std::string_view text) {
  std::vector<SlotMap> out;
  for (const auto& piece : split_plain(text)) {
    if (starts_with_domain(piece)) {
      out.push_back({domain_of(piece), {}});
      continue;
    }
    if (out.empty()) fail("slot map must start with 'domain:' in '" + std::string(text) + "'");
    SlotValue p = parse_pair(piece);
    if (out.back().find(p.slot)) fail("duplicate slot '" + p.slot + "' in slot map");
    out.back().pairs.push_back(std::move(p));
  }
  return out;
}

std::string render_plans(const std::vector<DomainPlans>& plans) {
  std::vector<std::string> parts;
  for (const auto& d : plans) {
    parts.push_back(std::string(kDomainPrefix) + d.domain);
    for (const auto& p : d.plans) parts.push_back(p);
  }
  return join(parts, ", ");
}

std::vector<DomainPlans> parse_plans(std::string_view text) {
  std::vector<DomainPlans> out;
  for (const auto& piece : split_plain(text)) {
    if (starts_with_domain(piece)) {
      out.push_back({domain_of(piece), {}});
      continue;
    }
    if (out.empty()) fail("plans must start with 'domain:'");
    if (piece.empty()) fail("empty plan name");
    out.back().plans.push_back(piece);
  }
  return out;
}

std::string render_api_actions(const std::vector<ApiAction>& acts) {
  std::vector<std::string> parts;
  const std::string* current = nullptr;
  for (const auto& a : acts) {
    if (!current || *current != a.domain) {
      parts.push_back(std::string(kDomainPrefix) + a.domain);
      current = &a.domain;
    }
    parts.push_back(a.plan + "-" + std::string(to_string(a.action)));
  }
  return join(parts, ", ");
}

std::vector<ApiAction> parse_api_action(std::string_view text) {
  std::vector<ApiAction> out;
  std::string domain;
  for (const auto& piece : split_plain(text)) {
    if (starts_with_domain(piece)) {
      domain = domain_of(piece);
      continue;
    }
    if (domain.empty()) fail("api action without 'domain:' prefix");
    size_t dash = piece.rfind('-');
    if (dash == std::string::npos || dash == 0) fail("malformed api action '" + piece + "'");
    auto verb = parse_api_verb(std::string_view(piece).substr(dash + 1));
    if (!verb) fail("unknown api action verb in '" + piece + "'");
    std::string plan = piece.substr(0, dash);
    if (*verb == ApiVerb::kRetrieve && plan != "booking")
      fail("retrieve is only valid for the booking plan: '" + piece + "'");
    out.push_back({domain, std::move(plan), *verb});
  }
  return out;
}

std::string render_act_pairs(const SlotPairs& pairs) {
  py::List l;
  for (const auto& p : pairs) l.push_back(py::List{py::Value(p.slot), py::Value(p.value)});
  return py::repr(py::Value(std::move(l)));
}

SlotPairs parse_act_pairs(std::string_view text) {
  SlotPairs out;
  try {
    py::Value v = py::parse(text);
    for (const auto& item : v.as_list()) {
      const auto& pair = item.as_list();
      if (pair.size() != 2) fail("act slot entry must be a pair in '" + std::string(text) + "'");
      out.push_back({pair[0].as_string(), pair[1].as_string()});
    }
  } catch (const py::LiteralError& e) {
    fail(std::string("malformed act slot list: ") + e.what());
  }
  return out;
}

std::string render_dialogue_acts(const std::vector<DialogueAct>& acts) {
  std::vector<std::string> parts;
  const std::string* current = nullptr;
  for (const auto& a : acts) {
    if (!current || *current != a.domain) {
      parts.push_back(std::string(kDomainPrefix) + a.domain);
      current = &a.domain;
    }
    std::string s = a.plan + "-" + std::string(to_string(a.status)) + "-" + std::string(to_string(a.act));
    if (a.slot_values) s += ":" + render_act_pairs(*a.slot_values);
    parts.push_back(std::move(s));
  }
  return join(parts, ", ");
}

std::vector<DialogueAct> parse_dialogue_act(std::string_view text) {
  std::vector<DialogueAct> out;
  std::string domain;
  for (const auto& piece : split_top_level(text, ", ")) {
    if (starts_with_domain(piece)) {
      domain = domain_of(piece);
      continue;
    }
    if (domain.empty()) fail("dialogue act without 'domain:' prefix");
    std::string head = piece;
    std::optional<SlotPairs> pairs;
    size_t colon = piece.find(':');
    if (colon != std::string::npos) {
      head = piece.substr(0, colon);
      pairs = parse_act_pairs(std::string_view(piece).substr(colon + 1));
    }
    size_t d1 = head.find('-');
    size_t d2 = d1 == std::string::npos ? d1 : head.find('-', d1 + 1);
    if (d1 == std::string::npos || d2 == std::string::npos || head.find('-', d2 + 1) != std::string::npos || d1 == 0)
      fail("dialogue act must be PLAN-STATUS-ACTION: '" + piece + "'");
    auto status = parse_act_status(std::string_view(head).substr(d1 + 1, d2 - d1 - 1));
    auto act = parse_act_type(std::string_view(head).substr(d2 + 1));
    if (!status) fail("unknown status code in '" + piece + "'");
    if (!act) fail("unknown dialogue action in '" + piece + "'");
    std::string plan = head.substr(0, d1);
    if (*status == ActStatus::kNoBook && plan != "booking") fail("nobook is only valid for the booking plan");
    if (*status == ActStatus::kNoOffer && plan != "search") fail("nooffer is only valid for the search plan");
    out.push_back({domain, std::move(plan), *status, *act, std::move(pairs)});
  }
  return out;
}

std::string render_payloads(const std::vector<DomainPayload>& payloads) {
  std::vector<std::string> parts;
  for (const auto& p : payloads) {
    parts.push_back(std::string(kDomainPrefix) + p.domain);
    if (!p.payload.empty()) parts.push_back(p.payload);
  }
  return join(parts, ", ");
}

std::vector<DomainPayload> parse_payloads(std::string_view text) {
  std::vector<DomainPayload> out;
  for (const auto& piece : split_top_level(text, ", ")) {
    if (starts_with_domain(piece)) {
      out.push_back({domain_of(piece), {}});
      continue;
    }
    if (out.empty()) fail("payload must start with 'domain:'");
    if (!out.back().payload.empty()) out.back().payload += ", ";
    out.back().payload += piece;
  }
  return out;
}

// ---- block access ----------------------------------------------------------

std::optional<std::string> get_block(const TurnRecord& t, Block b) {
  auto list = [](const auto& o) -> std::optional<std::string> {
    if (!o) return std::nullopt;
    return join(*o, ", ");
  };
  switch (b) {
    case Block::kUsr: return t.user_utterance.empty() ? std::nullopt : std::optional(t.user_utterance);
    case Block::kIntents: return list(t.intents);
    case Block::kEntities: return t.entities ? std::optional(render_pairs(*t.entities)) : std::nullopt;
    case Block::kAllEntities: return t.all_entities ? std::optional(render_pairs(*t.all_entities)) : std::nullopt;
    case Block::kAllDomains: return list(t.all_domains);
    case Block::kDomains: return list(t.domains);
    case Block::kSlotsSearch: return t.slots_search ? std::optional(render_slot_maps(*t.slots_search)) : std::nullopt;
    case Block::kSlotsBooking:
      return t.slots_booking ? std::optional(render_slot_maps(*t.slots_booking)) : std::nullopt;
    case Block::kSlotsRequestable:
      return t.slots_requestable ? std::optional(render_payloads(*t.slots_requestable)) : std::nullopt;
    case Block::kPlans: return t.plans ? std::optional(render_plans(*t.plans)) : std::nullopt;
    case Block::kApiActs: return t.api_acts ? std::optional(render_api_actions(*t.api_acts)) : std::nullopt;
    case Block::kResults: return t.results ? std::optional(render_payloads(*t.results)) : std::nullopt;
    case Block::kDlgActs: return t.dlg_acts ? std::optional(render_dialogue_acts(*t.dlg_acts)) : std::nullopt;
    case Block::kDelex: return t.delex;
    case Block::kSys: return t.system_response.empty() ? std::nullopt : std::optional(t.system_response);
  }
  return std::nullopt;
}

void set_block(TurnRecord& t, Block b, const std::optional<std::string>& r) {
  if (r) check_text(block_key(b), *r);
  switch (b) {
    case Block::kUsr: t.user_utterance = r.value_or(""); return;
    case Block::kIntents:
      t.intents = r ? std::optional(parse_list(*r)) : std::nullopt;
      return;
    case Block::kEntities: t.entities = r ? std::optional(parse_pairs(*r)) : std::nullopt; return;
    case Block::kAllEntities: t.all_entities = r ? std::optional(parse_pairs(*r)) : std::nullopt; return;
    case Block::kAllDomains: t.all_domains = r ? std::optional(parse_list(*r)) : std::nullopt; return;
    case Block::kDomains: t.domains = r ? std::optional(parse_list(*r)) : std::nullopt; return;
    case Block::kSlotsSearch: t.slots_search = r ? std::optional(parse_slot_maps(*r)) : std::nullopt; return;
    case Block::kSlotsBooking: t.slots_booking = r ? std::optional(parse_slot_maps(*r)) : std::nullopt; return;
    case Block::kSlotsRequestable:
      t.slots_requestable = r ? std::optional(parse_payloads(*r)) : std::nullopt;
      return;
    case Block::kPlans: t.plans = r ? std::optional(parse_plans(*r)) : std::nullopt; return;
    case Block::kApiActs: t.api_acts = r ? std::optional(parse_api_action(*r)) : std::nullopt; return;
    case Block::kResults: t.results = r ? std::optional(parse_payloads(*r)) : std::nullopt; return;
    case Block::kDlgActs: t.dlg_acts = r ? std::optional(parse_dialogue_act(*r)) : std::nullopt; return;
    case Block::kDelex: t.delex = r; return;
    case Block::kSys: t.system_response = r.value_or(""); return;
  }
}

void validate_turn(const TurnRecord& t) {
  if (t.user_utterance.empty()) fail("user utterance is required");
  check_text("usr", t.user_utterance);
  check_text("sys", t.system_response);
  if (t.delex) check_text("delex", *t.delex);
  auto check_list = [](std::string_view what, const std::optional<std::vector<std::string>>& l) {
    if (!l) return;
    for (const auto& s : *l) check_atom(what, s);
  };
  check_list("intent", t.intents);
  check_list("domain", t.all_domains);
  check_list("domain", t.domains);
  if (t.entities) check_pairs(*t.entities);
  if (t.all_entities) check_pairs(*t.all_entities);
  for (const auto* maps : {&t.slots_search, &t.slots_booking}) {
    if (!*maps) continue;
    for (const auto& m : **maps) {
      check_key("domain", m.domain);
      check_pairs(m.pairs);
      std::set<std::string> seen;
      for (const auto& p : m.pairs)
        if (!seen.insert(p.slot).second) fail("duplicate slot in slot map");
    }
  }
  if (t.plans) {
    for (const auto& d : *t.plans) {
      check_key("domain", d.domain);
      for (const auto& p : d.plans) {
        check_atom("plan", p);
        if (starts_with_domain(p)) fail("plan named like a domain marker");
      }
    }
  }
  if (t.api_acts) {
    for (const auto& a : *t.api_acts) {
      check_key("domain", a.domain);
      check_atom("plan", a.plan);
      if (a.action == ApiVerb::kRetrieve && a.plan != "booking") fail("retrieve is only valid for booking");
    }
  }
  if (t.dlg_acts) {
    for (const auto& a : *t.dlg_acts) {
      check_key("domain", a.domain);
      check_key("plan", a.plan);
      if (a.plan.find('-') != std::string::npos) fail("plan contains '-'");
      if (a.status == ActStatus::kNoBook && a.plan != "booking") fail("nobook is only valid for booking");
      if (a.status == ActStatus::kNoOffer && a.plan != "search") fail("nooffer is only valid for search");
      if (a.slot_values)
        for (const auto& p : *a.slot_values) {
          check_text("act slot", p.slot);
          check_text("act value", p.value);
        }
    }
  }
  for (const auto* payloads : {&t.slots_requestable, &t.results}) {
    if (!*payloads) continue;
    for (const auto& p : **payloads) {
      check_key("domain", p.domain);
      check_text("payload", p.payload);
      for (const auto& piece : split_top_level(p.payload, ", "))
        if (starts_with_domain(piece)) fail("payload piece starts with 'domain:'");
    }
  }
  // Anything the checks above miss (unbalanced quotes in a payload, a plan
  // with a dash, ...) shows up as a lossy re-parse.
  TurnRecord reparsed;
  for (Block b : all_blocks()) set_block(reparsed, b, get_block(t, b));
  if (!(reparsed == t)) fail("turn does not survive a serialize/parse cycle");
}

TurnRecord apply_variant(const TurnRecord& turn, Variant variant) {
  TurnRecord out = turn;
  if (variant == Variant::kFull) return out;
  out.all_entities.reset();
  out.all_domains.reset();
  if (variant == Variant::kMin) out.plans.reset();
  return out;
}

std::string serialize_turn(const TurnRecord& turn, Variant variant) {
  std::string out;
  for (Block b : all_blocks()) {
    if (variant_excludes(variant, b)) continue;
    auto value = get_block(turn, b);
    if (!value) continue;
    out += block_key(b);
    out += ": ";
    out += *value;
    out += '\n';
  }
  out += kTurnSep;
  out += '\n';
  return out;
}

TurnRecord parse_turn(std::string_view block) {
  TurnRecord t;
  std::set<Block> seen;
  for (auto line : split_lines(block)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line == kTurnSep) break;
    if (line.empty()) continue;
    size_t colon = line.find(':');
    if (colon == std::string::npos) fail("line without key: '" + line + "'");
    std::string key = line.substr(0, colon);
    auto b = block_from_key(key);
    if (!b) fail("unknown key '" + key + "'");
    if (!seen.insert(*b).second) fail("duplicate key '" + key + "'");
    std::string value = line.substr(colon + 1);
    if (!value.empty() && value[0] == ' ') value.erase(0, 1);
    set_block(t, *b, value);
  }
  return t;
}

std::string serialize_conversation(const ConversationRecord& conv, Variant variant) {
  std::string out(kConversationSep);
  out += '\n';
  for (const auto& t : conv.turns) out += serialize_turn(t, variant);
  out += kConversationSep;
  out += '\n';
  return out;
}

std::vector<ConversationRecord> parse_conversations(std::string_view text) {
  std::vector<ConversationRecord> out;
  bool open = false;
  std::string pending;
  ConversationRecord current;
  for (auto line : split_lines(text)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!open) {
      if (line.empty()) continue;
      if (line != kConversationSep) fail("expected '<conversation_sep>' but found '" + line + "'");
      open = true;
      current = {};
      continue;
    }
    if (line == kTurnSep) {
      if (trim(pending).empty()) fail("empty turn block");
      current.turns.push_back(parse_turn(pending));
      pending.clear();
    } else if (line == kConversationSep) {
      if (!trim(pending).empty()) current.turns.push_back(parse_turn(pending));
      pending.clear();
      if (current.turns.empty()) fail("conversation without turns");
      out.push_back(std::move(current));
      open = false;
    } else {
      pending += line;
      pending += '\n';
    }
  }
  if (open) fail("missing closing '<conversation_sep>'");
  return out;
}

ConversationRecord parse_conversation(std::string_view text) {
  auto convs = parse_conversations(text);
  if (convs.size() != 1) fail("expected exactly one conversation, found " + std::to_string(convs.size()));
  return std::move(convs.front());
}

std::string serialize_conversations(const std::vector<ConversationRecord>& convs, Variant variant) {
  std::string out;
  for (const auto& c : convs) out += serialize_conversation(c, variant);
  return out;
}

}  // namespace todflow
