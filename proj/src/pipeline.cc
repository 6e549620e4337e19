#include "todflow/pipeline.h"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "todflow/flow.h"
#include "todflow/text.h"

namespace todflow {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string json_text(const ojson& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_null()) return "";
  return v.dump();
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

std::string slot_value(const ojson& v) {
  std::string s = normalize_value(one_line(json_text(v)));
  if (s.empty() || s == "not mentioned" || s == "none") return std::string(kUnfilled);
  return s;
}

// A value that cannot appear in a ", "-separated list unchanged.
std::string list_safe(std::string v, bool& changed) {
  size_t p;
  while ((p = v.find(", ")) != std::string::npos) {
    v.erase(p + 1, 1);
    changed = true;
  }
  return v;
}

const ojson* section(const ojson& domain_md, const char* name) {
  if (!domain_md.is_object()) return nullptr;
  auto it = domain_md.find(name);
  return it == domain_md.end() || !it->is_object() ? nullptr : &*it;
}

size_t booked_count(const ojson& metadata, const std::string& domain) {
  if (!metadata.contains(domain)) return 0;
  const ojson* book = section(metadata[domain], "book");
  if (!book || !book->contains("booked") || !(*book)["booked"].is_array()) return 0;
  return (*book)["booked"].size();
}

py::Value literal_from_json(const ojson& v) {
  if (v.is_object()) {
    py::Dict d;
    for (const auto& [k, x] : v.items()) d.emplace_back(k, literal_from_json(x));
    return py::Value(std::move(d));
  }
  if (v.is_array()) {
    py::List l;
    for (const auto& x : v) l.push_back(literal_from_json(x));
    return py::Value(std::move(l));
  }
  if (v.is_number_integer()) return py::Value(static_cast<std::int64_t>(v.get<long long>()));
  return py::Value(json_text(v));
}

py::Value pairs_literal(const SlotPairs& pairs) {
  py::List l;
  for (const auto& p : pairs) l.push_back(py::List{py::Value(p.slot), py::Value(p.value)});
  return py::Value(std::move(l));
}

bool has_plan(const Ontology& o, const std::string& domain, const char* plan) { return o.find_plan(domain, plan); }

std::vector<std::string> read_id_list(const fs::path& dir, const std::string& stem) {
  std::vector<std::string> ids;
  fs::path txt = dir / (stem + ".txt");
  fs::path js = dir / (stem + ".json");
  if (fs::exists(txt)) {
    std::ifstream in(txt);
    std::string line;
    while (std::getline(in, line)) {
      line = trim(line);
      if (!line.empty()) ids.push_back(dialogue_key(line));
    }
  } else if (fs::exists(js)) {
    std::ifstream in(js);
    for (const auto& v : ojson::parse(in)) ids.push_back(dialogue_key(v.get<std::string>()));
  }
  return ids;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

// ---- raw corpus -------------------------------------------------------------

std::string dialogue_key(std::string_view file_name) {
  std::string s(file_name);
  if (s.size() > 5 && s.ends_with(".json")) s.resize(s.size() - 5);
  return s;
}

RawDialogue parse_raw_dialogue(const std::string& id, const ojson& j) {
  RawDialogue d;
  d.id = dialogue_key(id);
  if (!j.is_object() || !j.contains("log") || !j["log"].is_array())
    throw std::runtime_error("dialogue " + id + " has no 'log' array");
  if (j.contains("goal")) d.goal = j["goal"];
  for (const auto& t : j["log"]) {
    RawTurn turn;
    turn.text = json_text(t.value("text", ojson("")));
    if (t.contains("metadata") && t["metadata"].is_object()) turn.metadata = t["metadata"];
    if (t.contains("dialog_act") && t["dialog_act"].is_object()) turn.dialog_act = t["dialog_act"];
    if (t.contains("intents") && t["intents"].is_array()) {
      std::vector<std::string> intents;
      for (const auto& i : t["intents"]) intents.push_back(json_text(i));
      turn.intents = std::move(intents);
    }
    d.log.push_back(std::move(turn));
  }
  return d;
}

RawCorpus load_raw_corpus(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("corpus directory not found: " + dir.string());
  std::map<std::string, RawDialogue> by_id;
  ojson acts;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  static const std::set<std::string> kSkip{"valListFile.json", "testListFile.json", "ontology.json"};
  for (const auto& path : files) {
    std::string name = path.filename().string();
    if (kSkip.count(name) || name.ends_with("_db.json")) continue;
    std::ifstream in(path);
    ojson j;
    try {
      j = ojson::parse(in);
    } catch (const ojson::exception& e) {
      throw std::runtime_error("malformed corpus file " + name + ": " + e.what());
    }
    if (name == "dialogue_acts.json") {
      acts = std::move(j);
      continue;
    }
    if (j.is_object() && j.contains("log")) {
      auto d = parse_raw_dialogue(name, j);
      by_id[d.id] = std::move(d);
    } else if (j.is_object()) {
      for (const auto& [id, body] : j.items()) {
        auto d = parse_raw_dialogue(id, body);
        by_id[d.id] = std::move(d);
      }
    }
  }
  // Separate act annotations are keyed by system turn number from 1.
  if (acts.is_object()) {
    for (auto& [id, d] : by_id) {
      auto it = acts.find(id);
      if (it == acts.end() || !it->is_object()) continue;
      for (size_t i = 1; i < d.log.size(); i += 2) {
        auto turn_it = it->find(std::to_string(i / 2 + 1));
        if (turn_it != it->end() && turn_it->is_object() && d.log[i].dialog_act.empty()) d.log[i].dialog_act = *turn_it;
      }
    }
  }
  RawCorpus corpus;
  for (auto& [id, d] : by_id) {
    corpus.split_of[id] = "train";
    corpus.dialogues.push_back(std::move(d));
  }
  for (const auto& id : read_id_list(dir, "valListFile"))
    if (corpus.split_of.count(id)) corpus.split_of[id] = "valid";
  for (const auto& id : read_id_list(dir, "testListFile"))
    if (corpus.split_of.count(id)) corpus.split_of[id] = "test";
  return corpus;
}

// ---- configuration ----------------------------------------------------------

void PipelineConfig::validate() const {
  if (k < 1) throw std::invalid_argument("k must be at least 1");
  if (max_sequence_length < 64) throw std::invalid_argument("max_sequence_length must be at least 64");
}

void load_pipeline_settings(const fs::path& path, PipelineConfig& config) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open pipeline settings " + path.string());
  ojson j = ojson::parse(in);
  auto strings = [&](const char* key, std::vector<std::string>& dst) {
    if (j.contains(key)) dst = j[key].get<std::vector<std::string>>();
  };
  strings("confirm_cues", config.confirm_cues);
  strings("placeholders", config.lexicon.inventory);
  strings("days", config.lexicon.days);
  strings("areas", config.lexicon.areas);
  if (j.contains("max_count_digits")) config.lexicon.max_count_digits = j["max_count_digits"].get<size_t>();
}

bool Issue::operator<(const Issue& o) const {
  return std::tie(dialogue_id, turn, category, detail) < std::tie(o.dialogue_id, o.turn, o.category, o.detail);
}

std::string format_issue(const Issue& i) {
  return "dialogue_id=" + i.dialogue_id + "\tturn=" + std::to_string(i.turn) + "\tcategory=" + i.category +
         "\tdetail=" + i.detail;
}

// ---- per-turn mappings ------------------------------------------------------

std::pair<SlotMap, SlotMap> map_slots(const Ontology& ontology, const std::string& domain, const ojson& md,
                                      std::vector<Issue>* issues, const std::string& dialogue_id, int turn) {
  const ojson* semi = section(md, "semi");
  const ojson* book = section(md, "book");
  auto lookup = [&](const std::string& slot, const ojson* first, const ojson* second) -> std::string {
    for (const ojson* s : {first, second})
      if (s && s->contains(slot)) return slot_value((*s)[slot]);
    return std::string(kUnfilled);
  };
  SlotMap search{domain, {}}, booking{domain, {}};
  if (has_plan(ontology, domain, "search"))
    for (const auto& s : ontology.slots_for(domain, "search")) search.pairs.push_back({s.name, lookup(s.name, semi, book)});
  if (has_plan(ontology, domain, "booking"))
    for (const auto& s : ontology.slots_for(domain, "booking")) booking.pairs.push_back({s.name, lookup(s.name, book, semi)});
  if (issues) {
    for (const ojson* s : {book, semi}) {
      if (!s) continue;
      for (const auto& [field, value] : s->items()) {
        if (field == "booked" || ontology.find_slot(domain, field)) continue;
        if (slot_value(value) == kUnfilled) continue;
        issues->push_back({dialogue_id, turn, "unmapped_slot", domain + "." + field});
      }
    }
  }
  return {search, booking};
}

std::optional<std::pair<ActStatus, ActType>> derive_status_code(std::string_view source_act) {
  std::string a = to_lower(source_act);
  if (a == "nobook") return std::pair{ActStatus::kNoBook, ActType::kInform};
  if (a == "nooffer") return std::pair{ActStatus::kNoOffer, ActType::kInform};
  if (auto t = parse_act_type(a)) return std::pair{ActStatus::kNoError, *t};
  return std::nullopt;
}

std::string classify_act_plan(const Ontology& ontology, const std::string& domain, ActType act, ActStatus status,
                              const SlotPairs& pairs) {
  std::string plan;
  if (status == ActStatus::kNoBook) {
    plan = "booking";
  } else if (status == ActStatus::kNoOffer) {
    plan = "search";
  } else if (act == ActType::kBook || act == ActType::kOfferBook || act == ActType::kOfferBooked) {
    plan = "booking";
  } else if (act == ActType::kRecommend || act == ActType::kSelect) {
    plan = "search";
  } else {
    plan = "search";
    for (const auto& p : pairs) {
      std::string slot = ontology.canonical_slot(p.slot);
      if (slot == "reference" ||
          (ontology.is_booking_slot(domain, slot) && !ontology.is_search_slot(domain, slot))) {
        plan = "booking";
        break;
      }
    }
  }
  if (!ontology.find_plan(domain, plan)) {
    if (plan == "booking" && ontology.find_plan(domain, "search") && status != ActStatus::kNoBook) return "search";
    if (plan == "search" && ontology.find_plan(domain, "booking") && status != ActStatus::kNoOffer) return "booking";
  }
  return plan;
}

std::vector<ApiAction> derive_api_actions(const Ontology& ontology, const DomainActivity& a) {
  std::vector<ApiAction> out;
  bool search = false, retrieve = false;
  for (const auto& act : a.acts) {
    if (act.status == ActStatus::kNoOffer || act.act == ActType::kOfferBook) search = true;
    if (act.plan == "search" && act.status == ActStatus::kNoError &&
        (act.act == ActType::kInform || act.act == ActType::kRecommend || act.act == ActType::kSelect))
      search = true;
    if (act.plan == "booking" && act.status == ActStatus::kNoError && act.act == ActType::kInform) retrieve = true;
  }
  if (search && ontology.find_plan(a.domain, "search")) out.push_back({a.domain, "search", ApiVerb::kExecute});
  if (ontology.find_plan(a.domain, "booking")) {
    if (a.booked_after > a.booked_before || a.nobook)
      out.push_back({a.domain, "booking", ApiVerb::kExecute});
    else if (retrieve && a.booked_after > 0)
      out.push_back({a.domain, "booking", ApiVerb::kRetrieve});
  }
  return out;
}

bool confirm_cue(std::string_view utterance, const std::vector<std::string>& cues) {
  auto toks = split_whitespace(normalize_utterance(utterance));
  for (const auto& cue : cues) {
    if (cue == "<number>") {
      for (const auto& t : toks)
        if (is_integer_token(t)) return true;
      continue;
    }
    auto needle = split_whitespace(normalize_utterance(cue));
    if (needle.empty() || needle.size() > toks.size()) continue;
    for (size_t i = 0; i + needle.size() <= toks.size(); ++i)
      if (std::equal(needle.begin(), needle.end(), toks.begin() + i)) return true;
  }
  return false;
}

// ---- dialogue conversion ----------------------------------------------------

namespace {

struct SourceAct {
  std::string domain;
  DialogueAct act;
  std::string raw_name;
};

class DialogueConverter {
 public:
  DialogueConverter(const RawDialogue& raw, const Database& db, const Ontology& ontology, const PipelineConfig& config,
                    std::vector<Issue>& issues)
      : raw_(raw), db_(db), ontology_(ontology), config_(config), issues_(issues), refs_(config.seed) {}

  ConvertedDialogue run();

 private:
  void issue(int turn, std::string category, std::string detail) {
    issues_.push_back({raw_.id, turn, std::move(category), std::move(detail)});
  }
  std::vector<SlotValue> entities(const ojson& md, int turn);
  std::vector<SourceAct> acts(const ojson& dialog_act, const ojson& md, int turn);
  bool book_changed(const ojson& md, const std::string& domain) const;
  std::vector<DelexSource> delex_sources(const TurnRecord& rec, const ojson& md) const;

  const RawDialogue& raw_;
  const Database& db_;
  const Ontology& ontology_;
  const PipelineConfig& config_;
  std::vector<Issue>& issues_;
  ReferenceGenerator refs_;
  BookingLedger ledger_;
  ojson prev_md_ = ojson::object();
  std::string active_domain_;
  std::string train_confirm_ = std::string(kUnfilled);
  bool offered_train_ = false;
};

std::vector<SlotValue> DialogueConverter::entities(const ojson& md, int turn) {
  std::vector<SlotValue> out;
  std::set<std::string> seen;
  bool sanitized = false;
  for (const auto& [domain, body] : md.items()) {
    bool known = ontology_.find_domain(domain) != nullptr;
    if (!body.is_object()) continue;
    for (const auto& [sec_name, sec] : body.items()) {
      if (!sec.is_object()) continue;
      for (const auto& [field, value] : sec.items()) {
        if (field == "booked") continue;
        std::string v = slot_value(value);
        if (v == kUnfilled) continue;
        std::string before(kUnfilled);
        if (prev_md_.contains(domain) && prev_md_[domain].contains(sec_name) && prev_md_[domain][sec_name].contains(field))
          before = slot_value(prev_md_[domain][sec_name][field]);
        if (v == before) continue;
        if (!known) {
          issue(turn, "unmapped_domain", domain + "." + field);
          continue;
        }
        if (!ontology_.find_slot(domain, field)) continue;  // reported by map_slots
        if (!seen.insert(field).second) continue;
        out.push_back({field, list_safe(v, sanitized)});
      }
    }
  }
  if (sanitized) issue(turn, "value_sanitized", "entity value contained ', '");
  return out;
}

bool DialogueConverter::book_changed(const ojson& md, const std::string& domain) const {
  if (!md.contains(domain)) return false;
  const ojson* now = section(md[domain], "book");
  const ojson* before = prev_md_.contains(domain) ? section(prev_md_[domain], "book") : nullptr;
  if (!now) return false;
  if (!before) return !now->empty();
  return *now != *before;
}

std::vector<SourceAct> DialogueConverter::acts(const ojson& dialog_act, const ojson& md, int turn) {
  std::vector<SourceAct> out;
  for (const auto& [name, raw_pairs] : dialog_act.items()) {
    size_t dash = name.find('-');
    if (dash == std::string::npos) {
      issue(turn, "unmapped_act", name);
      continue;
    }
    std::string domain = to_lower(name.substr(0, dash));
    std::string act_name = name.substr(dash + 1);
    if (domain == "booking") {
      domain.clear();
      for (const auto& [d, body] : md.items())
        if (ontology_.find_plan(d, "booking") && book_changed(md, d)) {
          domain = d;
          break;
        }
      if (domain.empty()) domain = active_domain_;
      if (domain.empty() || !ontology_.find_plan(domain, "booking")) {
        issue(turn, "booking_unresolved", name);
        continue;
      }
    }
    if (!ontology_.find_domain(domain)) {
      issue(turn, "unmapped_domain", name);
      continue;
    }
    SlotPairs pairs;
    if (raw_pairs.is_array()) {
      for (const auto& p : raw_pairs) {
        if (!p.is_array() || p.size() != 2) continue;
        std::string slot = one_line(json_text(p[0])), value = one_line(json_text(p[1]));
        if (to_lower(slot) == "none" && to_lower(value) == "none") continue;
        pairs.push_back({slot, value});
      }
    }
    DialogueAct act;
    act.domain = domain;
    if (!pairs.empty()) act.slot_values = pairs;
    if (domain == "general") {
      std::string plan = to_lower(act_name);
      if (!ontology_.find_plan("general", plan)) {
        issue(turn, "unmapped_act", name);
        continue;
      }
      act.plan = plan;
      act.act = ActType::kInform;
    } else {
      auto code = derive_status_code(act_name);
      if (!code) {
        issue(turn, "unmapped_act", name);
        continue;
      }
      act.status = code->first;
      act.act = code->second;
      act.plan = classify_act_plan(ontology_, domain, act.act, act.status, pairs);
      if (!ontology_.find_plan(domain, act.plan)) {
        issue(turn, "unmapped_act", name + " has no " + act.plan + " plan");
        continue;
      }
    }
    out.push_back({domain, std::move(act), name});
  }
  return out;
}

std::vector<DelexSource> DialogueConverter::delex_sources(const TurnRecord& rec, const ojson& md) const {
  std::vector<DelexSource> out;
  auto add = [&](const std::string& domain, const std::string& slot, const std::string& value) {
    if (ontology_.is_requestable(domain, slot)) out.push_back({domain, slot, value});
  };
  if (rec.dlg_acts)
    for (const auto& a : *rec.dlg_acts)
      if (a.slot_values)
        for (const auto& p : *a.slot_values) add(a.domain, ontology_.canonical_slot(p.slot), p.value);
  const DomainSpec* spec = nullptr;
  auto add_record = [&](const std::string& domain, const std::function<std::optional<std::string>(const std::string&)>& get) {
    spec = ontology_.find_domain(domain);
    if (!spec) return;
    for (const auto& s : spec->requestable)
      if (auto v = get(s.field())) add(domain, s.name, *v);
  };
  if (rec.results) {
    for (const auto& r : *rec.results) {
      if (r.payload.starts_with("booked:")) {
        try {
          BookingResult b = BookingResult::parse(r.domain, r.payload);
          add_record(r.domain, [&](const std::string& f) { return b.field(f, &ontology_); });
        } catch (const DbError&) {
        }
      } else {
        try {
          SearchResult s = SearchResult::parse(r.domain, r.payload);
          for (const auto& e : s.sample)
            add_record(r.domain, [&](const std::string& f) -> std::optional<std::string> {
              if (const auto* v = e.get(f)) return *v;
              return std::nullopt;
            });
        } catch (const DbError&) {
        }
      }
    }
  }
  for (const auto& [domain, body] : md.items()) {
    if (!ontology_.find_domain(domain)) continue;
    const ojson* book = section(body, "book");
    if (book && book->contains("booked") && (*book)["booked"].is_array())
      for (const auto& entry : (*book)["booked"])
        if (entry.is_object())
          add_record(domain, [&](const std::string& f) -> std::optional<std::string> {
            if (entry.contains(f)) return json_text(entry[f]);
            return std::nullopt;
          });
  }
  if (rec.domains)
    for (const auto& d : *rec.domains)
      if (md.contains(d))
        if (const ojson* semi = section(md[d], "semi"); semi && semi->contains("name"))
          add(d, "name", slot_value((*semi)["name"]));
  return out;
}

ConvertedDialogue DialogueConverter::run() {
  ConvertedDialogue out;
  out.record.id = raw_.id;
  out.goal = goal_from_corpus(raw_.goal, ontology_);
  if (raw_.log.size() % 2 != 0) issue(static_cast<int>(raw_.log.size() / 2), "dangling_user_turn", "no system reply");

  std::vector<SlotValue> all_entities;
  std::vector<std::string> all_domains;
  ExecuteContext ctx{db_, ontology_, ledger_, refs_, config_.k};

  for (size_t i = 0; i + 1 < raw_.log.size(); i += 2) {
    const int turn = static_cast<int>(i / 2);
    const RawTurn& user = raw_.log[i];
    const RawTurn& sys = raw_.log[i + 1];
    const ojson& md = sys.metadata;
    TurnRecord rec;
    rec.user_utterance = trim(one_line(user.text));
    if (rec.user_utterance.empty()) {
      issue(turn, "empty_utterance", "user turn has no text");
      rec.user_utterance = "...";
    }
    if (user.intents && !user.intents->empty()) rec.intents = user.intents;

    // Train acceptance of a previous offer fills the confirm slot.
    std::vector<SlotValue> fresh = entities(md, turn);
    if (offered_train_) {
      if (confirm_cue(user.text, config_.confirm_cues)) {
        if (train_confirm_ != "yes") {
          train_confirm_ = "yes";
          fresh.erase(std::remove_if(fresh.begin(), fresh.end(), [](const SlotValue& e) { return e.slot == "confirm"; }),
                      fresh.end());
          fresh.insert(fresh.begin(), {"confirm", "yes"});
        }
      } else {
        issue(turn, "confirm_ambiguous", "train offer without an acceptance cue");
      }
    }
    if (!fresh.empty()) rec.entities = fresh;
    all_entities = update_all_entities(all_entities, fresh);
    if (!all_entities.empty()) rec.all_entities = all_entities;

    std::vector<SourceAct> source_acts = acts(sys.dialog_act, md, turn);
    std::vector<std::string> domains;
    for (const auto& a : source_acts)
      if (std::find(domains.begin(), domains.end(), a.domain) == domains.end()) domains.push_back(a.domain);
    all_domains = update_all_domains(all_domains, domains);
    if (!all_domains.empty()) rec.all_domains = all_domains;
    if (!domains.empty()) rec.domains = domains;

    std::vector<SlotMap> search_maps, booking_maps;
    for (const auto& d : domains) {
      if (d == "general") continue;
      auto [s, b] = map_slots(ontology_, d, md.contains(d) ? md[d] : ojson::object(), &issues_, raw_.id, turn);
      bool sanitized = false;
      for (auto* m : {&s, &b})
        for (auto& p : m->pairs) {
          p.value = list_safe(p.value, sanitized);
          if (ontology_.validate_slot_value(d, p.slot, p.value) == SlotVerdict::kInvalid &&
              !is_ignored_constraint(p.value))
            issue(turn, "invalid_value", d + "." + p.slot + "=" + p.value);
        }
      if (sanitized) issue(turn, "value_sanitized", d + " slot value contained ', '");
      if (d == "train")
        for (auto& p : b.pairs)
          if (p.slot == "confirm") p.value = train_confirm_;
      if (ontology_.find_plan(d, "search")) search_maps.push_back(std::move(s));
      if (ontology_.find_plan(d, "booking")) booking_maps.push_back(std::move(b));
    }
    if (!search_maps.empty()) rec.slots_search = search_maps;
    if (!booking_maps.empty()) rec.slots_booking = booking_maps;

    std::vector<DialogueAct> dlg_acts;
    std::vector<DomainPlans> plans;
    std::vector<ApiAction> api_acts;
    std::vector<DomainPayload> results, requestable;
    bool offered_now = false;
    for (const auto& d : domains) {
      DomainActivity activity;
      activity.domain = d;
      for (const auto& a : source_acts) {
        if (a.domain != d) continue;
        activity.acts.push_back(a.act);
        if (a.act.act == ActType::kOfferBook) activity.offerbook = true;
        if (a.act.status == ActStatus::kNoBook) activity.nobook = true;
      }
      activity.booked_before = booked_count(prev_md_, d);
      activity.booked_after = booked_count(md, d);
      if (d == "train" && activity.offerbook) offered_now = true;
      dlg_acts.insert(dlg_acts.end(), activity.acts.begin(), activity.acts.end());

      auto api = derive_api_actions(ontology_, activity);
      DomainPlans dp{d, {}};
      auto add_plan = [&](const std::string& p) {
        if (std::find(dp.plans.begin(), dp.plans.end(), p) == dp.plans.end()) dp.plans.push_back(p);
      };
      for (const auto& a : api) add_plan(a.plan);
      for (const auto& a : activity.acts) add_plan(a.plan);
      plans.push_back(std::move(dp));

      for (const auto& a : api) {
        api_acts.push_back(a);
        std::optional<std::string> gold;
        if (a.plan == "booking") {
          const SlotPairs* ref_pairs = nullptr;
          for (const auto& act : activity.acts) {
            if (act.plan != "booking" || !act.slot_values) continue;
            bool has_ref = std::any_of(act.slot_values->begin(), act.slot_values->end(),
                                       [&](const SlotValue& p) { return ontology_.canonical_slot(p.slot) == "reference"; });
            if (has_ref || (a.action == ApiVerb::kRetrieve && act.act == ActType::kInform)) {
              ref_pairs = &*act.slot_values;
              break;
            }
          }
          py::List fresh_entries;
          if (md.contains(d))
            if (const ojson* book = section(md[d], "book"); book && book->contains("booked"))
              for (size_t e = activity.booked_before; e < (*book)["booked"].size(); ++e)
                fresh_entries.push_back(literal_from_json((*book)["booked"][e]));
          py::Value booked{py::List{}};
          if (a.action == ApiVerb::kExecute && activity.nobook && activity.booked_after <= activity.booked_before) {
            // nothing was booked
          } else if (ref_pairs && (ref_pairs->size() > 1 || a.action == ApiVerb::kRetrieve || fresh_entries.empty())) {
            booked = pairs_literal(*ref_pairs);
          } else if (!fresh_entries.empty()) {
            booked = py::Value(std::move(fresh_entries));
          } else {
            issue(turn, "result_mismatch", d + " booking without booked record");
          }
          gold = "booked:" + py::repr(booked);
          if (a.action == ApiVerb::kRetrieve && md.contains(d))
            if (const ojson* book = section(md[d], "book"); book && book->contains("booked"))
              requestable.push_back({d, "booked:" + py::repr(literal_from_json((*book)["booked"]))});
        }
        try {
          ExecuteOutcome r = execute(a, search_maps, booking_maps, ctx, gold);
          results.push_back(r.result);
          if (a.plan == "search") {
            bool nooffer = std::any_of(activity.acts.begin(), activity.acts.end(),
                                       [](const DialogueAct& x) { return x.status == ActStatus::kNoOffer; });
            if (nooffer && r.status == ActStatus::kNoError)
              issue(turn, "result_mismatch", d + " nooffer act but database has matches");
            if (!nooffer && r.status == ActStatus::kNoOffer)
              issue(turn, "result_mismatch", d + " offer act but database has no match");
          }
        } catch (const DbError& e) {
          issue(turn, "db_error", e.what());
        }
      }
    }
    // Dialogue acts, plans and domains above follow domain order; acts of a
    // domain keep source order.
    if (!plans.empty()) rec.plans = plans;
    if (!api_acts.empty()) rec.api_acts = api_acts;
    if (!requestable.empty()) rec.slots_requestable = requestable;
    if (!results.empty()) rec.results = results;
    if (!dlg_acts.empty()) rec.dlg_acts = dlg_acts;

    rec.system_response = trim(one_line(sys.text));
    if (rec.system_response.empty()) issue(turn, "empty_response", "system turn has no text");
    auto sources = delex_sources(rec, md);
    DelexResult dx = delexicalize(rec.system_response, sources, config_.lexicon);
    std::string normalized = normalize_utterance(rec.system_response);
    for (const auto& s : sources) {
      std::string v = normalize_utterance(s.value);
      if (v.empty() || v == "?" || !rec.dlg_acts) continue;
      bool from_act = false;
      for (const auto& a : *rec.dlg_acts)
        if (a.domain == s.domain && a.slot_values)
          for (const auto& p : *a.slot_values)
            if (p.value == s.value) from_act = true;
      if (from_act && (" " + normalized + " ").find(" " + v + " ") == std::string::npos)
        issue(turn, "delex_unmatched", s.domain + "_" + s.slot + "=" + v);
    }
    if (!dx.text.empty()) rec.delex = dx.text;
    out.fills.push_back(dx.fills);
    out.normalized_responses.push_back(normalized);

    try {
      validate_turn(rec);
    } catch (const WireFormatError& e) {
      issue(turn, "invalid_record", e.what());
    }

    for (const auto& d : domains)
      if (d != "general") active_domain_ = d;
    offered_train_ = offered_now;
    prev_md_ = md;
    out.record.turns.push_back(std::move(rec));
  }
  return out;
}

}  // namespace

ConvertedDialogue convert_dialogue(const RawDialogue& raw, const Database& db, const Ontology& ontology,
                                   const PipelineConfig& config, std::vector<Issue>& issues) {
  return DialogueConverter(raw, db, ontology, config, issues).run();
}

ConvertedCorpus convert_corpus(const std::vector<RawDialogue>& raw, const Database& db, const Ontology& ontology,
                               const PipelineConfig& config) {
  config.validate();
  std::vector<const RawDialogue*> order;
  for (const auto& d : raw) order.push_back(&d);
  std::stable_sort(order.begin(), order.end(), [](const RawDialogue* a, const RawDialogue* b) { return a->id < b->id; });
  ConvertedCorpus out;
  for (const auto* d : order) out.dialogues.push_back(convert_dialogue(*d, db, ontology, config, out.issues));
  std::stable_sort(out.issues.begin(), out.issues.end(),
                   [](const Issue& a, const Issue& b) { return std::tie(a.dialogue_id, a.turn) < std::tie(b.dialogue_id, b.turn); });
  return out;
}

// ---- processed directory ----------------------------------------------------

ConvertedCorpus prepare_data(const fs::path& corpus_dir, const Database& db, const Ontology& ontology,
                             const PipelineConfig& config, const fs::path& out_dir) {
  RawCorpus raw = load_raw_corpus(corpus_dir);
  ConvertedCorpus converted = convert_corpus(raw.dialogues, db, ontology, config);
  fs::create_directories(out_dir);

  std::map<std::string, std::vector<const ConvertedDialogue*>> by_split;
  for (const auto& s : kSplits) by_split[s];
  for (const auto& d : converted.dialogues) by_split[raw.split_of.at(d.record.id)].push_back(&d);

  ojson manifest;
  manifest["variant"] = std::string(to_string(config.variant));
  manifest["k"] = config.k;
  manifest["seed"] = config.seed;
  manifest["max_sequence_length"] = config.max_sequence_length;
  manifest["ontology_version"] = ontology.version();
  manifest["splits"] = ojson::object();
  for (const auto& split : kSplits) {
    std::vector<ConversationRecord> records;
    ojson meta;
    meta["dialogues"] = ojson::array();
    for (const auto* d : by_split[split]) {
      records.push_back(d->record);
      meta["dialogues"].push_back({{"id", d->record.id}, {"turns", d->record.turns.size()}, {"goal", goal_to_json(d->goal)}});
    }
    write_file(out_dir / (split + ".conversations.txt"), serialize_conversations(records, config.variant));
    write_file(out_dir / (split + ".meta.json"), meta.dump(2) + "\n");
    if (split != "test") {
      std::vector<ConversationRecord> variant_records;
      for (const auto& r : records) {
        ConversationRecord v{r.id, {}};
        for (const auto& t : r.turns) v.turns.push_back(apply_variant(t, config.variant));
        variant_records.push_back(std::move(v));
      }
      write_file(out_dir / (split + ".tokens.txt"),
                 render_training_file(emit_training_sequences(variant_records, config)));
    }
    manifest["splits"][split] = records.size();
  }
  write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
  std::string log;
  for (const auto& i : converted.issues) log += format_issue(i) + "\n";
  write_file(out_dir / "issues.log", log);
  return converted;
}

ProcessedData load_processed(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::runtime_error("processed directory not found: " + dir.string());
  ProcessedData out;
  if (fs::exists(dir / "manifest.json")) {
    ojson m = ojson::parse(read_file(dir / "manifest.json"));
    out.variant = parse_variant(m.value("variant", std::string("FULL")));
    out.k = m.value("k", size_t{5});
    out.seed = m.value("seed", std::uint64_t{0});
  }
  for (const auto& split : kSplits) {
    fs::path conv = dir / (split + ".conversations.txt");
    if (!fs::exists(conv)) continue;
    ProcessedSplit s;
    s.conversations = parse_conversations(read_file(conv));
    fs::path meta = dir / (split + ".meta.json");
    if (fs::exists(meta)) {
      ojson m = ojson::parse(read_file(meta));
      const auto& ds = m["dialogues"];
      if (ds.size() != s.conversations.size())
        throw std::runtime_error(split + ".meta.json does not match " + conv.filename().string());
      for (size_t i = 0; i < ds.size(); ++i) {
        s.conversations[i].id = ds[i]["id"].get<std::string>();
        s.goals.push_back(goal_from_json(ds[i]["goal"]));
      }
    } else {
      for (size_t i = 0; i < s.conversations.size(); ++i) {
        s.conversations[i].id = split + "-" + std::to_string(i);
        s.goals.emplace_back();
      }
    }
    out.splits[split] = std::move(s);
  }
  return out;
}

}  // namespace todflow
