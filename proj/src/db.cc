#include "todflow/db.h"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "todflow/text.h"

namespace todflow {

namespace {

constexpr std::string_view kBookedPrefix = "booked:";
const char kRefAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789";

std::string scalar_text(const nlohmann::ordered_json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  return v.dump();
}

EntityRecord record_from_literal(std::string_view domain, const py::Value& v) {
  EntityRecord r;
  r.domain = std::string(domain);
  for (const auto& [k, val] : v.as_dict())
    r.attributes.emplace_back(k, val.is_string() ? val.as_string() : py::repr(val));
  return r;
}

bool field_matches(const std::string& field, const std::string& record_value, const std::string& wanted) {
  if (field == "arriveBy" || field == "leaveAt") {
    auto have = parse_clock(record_value);
    auto want = parse_clock(wanted);
    if (!have || !want) return false;
    return field == "arriveBy" ? *have <= *want : *have >= *want;
  }
  return normalize_value(record_value) == normalize_value(wanted);
}

}  // namespace

const std::string* EntityRecord::get(std::string_view field) const {
  for (const auto& [k, v] : attributes)
    if (k == field) return &v;
  return nullptr;
}

std::optional<std::pair<std::string, std::string>> EntityRecord::identity() const {
  for (std::string_view f : {"name", "trainID", "id"})
    if (const auto* v = get(f)) return std::make_pair(std::string(f), *v);
  return std::nullopt;
}

py::Value EntityRecord::to_literal() const {
  py::Dict d;
  for (const auto& [k, v] : attributes) d.emplace_back(k, py::Value(v));
  return py::Value(std::move(d));
}

std::string SearchResult::render() const {
  py::List sample_list;
  for (const auto& r : sample) sample_list.push_back(r.to_literal());
  py::List count{py::Value("Choice"), py::Value(choice)};
  py::List samples{py::Value("Sample"), py::Value(std::move(sample_list))};
  return py::repr(py::Value(std::move(count))) + ", " + py::repr(py::Value(std::move(samples)));
}

SearchResult SearchResult::parse(std::string_view domain, std::string_view payload) {
  SearchResult out;
  try {
    for (const auto& item : py::parse_sequence(payload)) {
      const auto& pair = item.as_list();
      if (pair.size() != 2) throw DbError("search result entries are [name, value] pairs");
      const auto& name = pair[0].as_string();
      if (name == "Choice") {
        out.choice = pair[1].is_int() ? pair[1].as_int() : std::stoll(pair[1].as_string());
      } else if (name == "Sample") {
        for (const auto& rec : pair[1].as_list()) out.sample.push_back(record_from_literal(domain, rec));
      }
    }
  } catch (const py::LiteralError& e) {
    throw DbError(std::string("malformed search result: ") + e.what());
  }
  return out;
}

std::string BookingResult::render() const { return std::string(kBookedPrefix) + py::repr(booked); }

BookingResult BookingResult::parse(std::string_view domain, std::string_view payload) {
  std::string_view p = payload;
  if (p.substr(0, kBookedPrefix.size()) != kBookedPrefix) throw DbError("booking payload must start with 'booked:'");
  BookingResult out;
  out.domain = std::string(domain);
  try {
    out.booked = py::parse(p.substr(kBookedPrefix.size()));
    out.booked.as_list();
  } catch (const py::LiteralError& e) {
    throw DbError(std::string("malformed booking payload: ") + e.what());
  }
  return out;
}

std::optional<std::string> BookingResult::field(std::string_view name, const Ontology* ontology) const {
  if (!booked.is_list()) return std::nullopt;
  for (const auto& item : booked.as_list()) {
    if (item.is_dict()) {
      if (const auto* v = item.find(name); v && v->is_string()) return v->as_string();
    } else if (item.is_list() && item.as_list().size() == 2 && item.as_list()[0].is_string() &&
               item.as_list()[1].is_string()) {
      const auto& key = item.as_list()[0].as_string();
      std::string canonical = ontology ? ontology->canonical_slot(key) : to_lower(key);
      if (key == name || canonical == name) return item.as_list()[1].as_string();
    }
  }
  return std::nullopt;
}

bool is_ignored_constraint(std::string_view value) {
  std::string v = normalize_value(value);
  return v.empty() || v == "?" || v == "dontcare" || v == "dont care" || v == "don't care" ||
         v == "not mentioned" || v == "none";
}

Database Database::load_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DbError("database directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && name.size() > 8 && name.ends_with("_db.json")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  Database db;
  for (const auto& f : files) {
    std::ifstream in(f);
    std::stringstream ss;
    ss << in.rdbuf();
    std::string name = f.filename().string();
    db.add_domain(name.substr(0, name.size() - 8), ss.str());
  }
  return db;
}

void Database::add_domain(const std::string& domain, std::string_view json_text) {
  DomainTable table;
  if (!trim(json_text).empty()) {
    nlohmann::ordered_json doc;
    try {
      doc = nlohmann::ordered_json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
      throw DbError("malformed database file for " + domain + ": " + e.what());
    }
    if (!doc.is_array()) throw DbError("database file for " + domain + " must hold a list of records");
    for (size_t i = 0; i < doc.size(); ++i) {
      const auto& rj = doc[i];
      if (!rj.is_object()) throw DbError(domain + " record " + std::to_string(i) + " is not an object");
      EntityRecord r;
      r.domain = domain;
      for (const auto& [k, v] : rj.items()) {
        if (v.is_array() || v.is_object()) continue;  // coordinates, nested price tables
        r.attributes.emplace_back(k, scalar_text(v));
        table.fields.insert(k);
      }
      if (!r.identity())
        throw DbError(domain + " record " + std::to_string(i) + " has no identity field (id, name or trainID)");
      table.records.push_back(std::move(r));
    }
  }
  domains_[domain] = std::move(table);
}

const std::vector<EntityRecord>& Database::records(std::string_view domain) const {
  auto it = domains_.find(std::string(domain));
  if (it == domains_.end()) throw DbError("unknown domain: " + std::string(domain));
  return it->second.records;
}

const std::set<std::string>& Database::fields(std::string_view domain) const {
  auto it = domains_.find(std::string(domain));
  if (it == domains_.end()) throw DbError("unknown domain: " + std::string(domain));
  return it->second.fields;
}

std::vector<std::string> Database::domain_names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : domains_) out.push_back(k);
  return out;
}

std::map<std::string, size_t> Database::counts() const {
  std::map<std::string, size_t> out;
  for (const auto& [k, v] : domains_) out[k] = v.records.size();
  return out;
}

SearchResult Database::search(const QueryConstraints& constraints, size_t k) const {
  auto it = domains_.find(constraints.domain);
  if (it == domains_.end()) throw DbError("unknown domain: " + constraints.domain);
  const DomainTable& table = it->second;
  std::vector<const SlotValue*> active;
  for (const auto& c : constraints.pairs) {
    if (is_ignored_constraint(c.value)) continue;
    if (!table.records.empty() && !table.fields.count(c.slot))
      throw DbError("unknown constraint field '" + c.slot + "' for domain " + constraints.domain);
    active.push_back(&c);
  }
  SearchResult out;
  for (const auto& r : table.records) {
    bool ok = true;
    for (const auto* c : active) {
      const std::string* v = r.get(c->slot);
      if (!v || !field_matches(c->slot, *v, c->value)) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    ++out.choice;
    if (out.sample.size() < k) out.sample.push_back(r);
  }
  return out;
}

std::vector<std::string> Database::place_names() const {
  std::set<std::string> names;
  auto it = domains_.find("train");
  if (it != domains_.end()) {
    for (const auto& r : it->second.records)
      for (std::string_view f : {"departure", "destination"})
        if (const auto* v = r.get(f)) names.insert(normalize_value(*v));
  }
  return {names.begin(), names.end()};
}

QueryConstraints constraints_from_slots(const Ontology& ontology, const SlotMap& slots) {
  QueryConstraints q;
  q.domain = slots.domain;
  for (const auto& p : slots.pairs) {
    const SlotSpec* spec = ontology.find_slot(slots.domain, p.slot);
    q.pairs.push_back({spec ? spec->field() : p.slot, p.value});
  }
  return q;
}

std::string ReferenceGenerator::next() {
  std::string out(8, 'A');
  for (char& c : out) c = kRefAlphabet[rng_() % 36];
  return out;
}

BookOutcome book(const Database& db, const Ontology& ontology, const std::string& domain, const SlotMap& booking,
                 const std::optional<EntityRecord>& entity, ReferenceGenerator& refs, BookingLedger& ledger) {
  if (!db.has_domain(domain)) throw DbError("unknown domain: " + domain);
  const PlanSpec* plan = ontology.find_plan(domain, "booking");
  if (!plan) throw DbError("domain " + domain + " has no booking plan");
  BookOutcome out;
  for (const auto& slot : plan->slots) {
    const std::string* v = booking.find(slot.name);
    bool filled = v && !is_ignored_constraint(*v);
    if (slot.name == "confirm") filled = v && normalize_value(*v) == "yes";
    if (!filled) {
      out.status = ActStatus::kNoBook;
      out.missing = slot.name;
      return out;
    }
  }
  std::string ref;
  do {
    ref = refs.next();
  } while (ledger.references.count(ref));
  ledger.references.insert(ref);

  py::Dict record;
  if (entity) {
    if (auto id = entity->identity()) record.emplace_back(id->first, py::Value(id->second));
  }
  record.emplace_back("reference", py::Value(ref));
  BookingResult result{domain, py::Value(py::List{py::Value(std::move(record))})};
  ledger.bookings[domain] = result;
  out.result = std::move(result);
  return out;
}

std::optional<BookingResult> retrieve_booking(const BookingLedger& ledger, std::string_view domain) {
  auto it = ledger.bookings.find(std::string(domain));
  if (it == ledger.bookings.end()) return std::nullopt;
  return it->second;
}

namespace {

const SlotMap* find_map(const std::vector<SlotMap>& maps, std::string_view domain) {
  for (const auto& m : maps)
    if (m.domain == domain) return &m;
  return nullptr;
}

}  // namespace

ExecuteOutcome execute(const ApiAction& action, const std::vector<SlotMap>& search_state,
                       const std::vector<SlotMap>& booking_state, ExecuteContext& ctx,
                       const std::optional<std::string>& gold_payload) {
  ExecuteOutcome out;
  out.result.domain = action.domain;
  if (action.plan == "search") {
    if (action.action != ApiVerb::kExecute) throw DbError("search only supports execute");
    QueryConstraints q{action.domain, {}};
    if (const SlotMap* m = find_map(search_state, action.domain)) q = constraints_from_slots(ctx.ontology, *m);
    SearchResult r = ctx.db.search(q, ctx.k);
    if (!r.sample.empty()) ctx.ledger.offered[action.domain] = r.sample.front();
    out.status = r.choice == 0 ? ActStatus::kNoOffer : ActStatus::kNoError;
    out.result.payload = r.render();
    return out;
  }
  if (action.plan != "booking") throw DbError("no back-end API for plan '" + action.plan + "'");

  if (gold_payload) {
    out.from_gold = true;
    out.result.payload = *gold_payload;
    try {
      BookingResult b = BookingResult::parse(action.domain, *gold_payload);
      bool empty = b.booked.as_list().empty();
      if (!empty && action.action == ApiVerb::kExecute) {
        ctx.ledger.bookings[action.domain] = b;
        if (auto ref = b.field("reference", &ctx.ontology)) ctx.ledger.references.insert(trim(*ref));
      }
      out.status = empty ? ActStatus::kNoBook : ActStatus::kNoError;
    } catch (const DbError&) {
      // Gold payloads are copied verbatim even when they are not structured.
    }
    return out;
  }

  if (action.action == ApiVerb::kRetrieve) {
    auto b = retrieve_booking(ctx.ledger, action.domain);
    if (!b) {
      out.status = ActStatus::kNoBook;
      out.result.payload = BookingResult{action.domain, py::Value(py::List{})}.render();
      return out;
    }
    out.result.payload = b->render();
    return out;
  }

  SlotMap empty{action.domain, {}};
  const SlotMap* booking = find_map(booking_state, action.domain);
  std::optional<EntityRecord> entity;
  if (const SlotMap* s = find_map(search_state, action.domain)) {
    const std::string* name = s->find("name");
    if (name && !is_ignored_constraint(*name) && ctx.db.fields(action.domain).count("name")) {
      auto r = ctx.db.search({action.domain, {{"name", *name}}}, 1);
      if (!r.sample.empty()) entity = r.sample.front();
    }
  }
  if (!entity) {
    auto it = ctx.ledger.offered.find(action.domain);
    if (it != ctx.ledger.offered.end()) entity = it->second;
  }
  BookOutcome b = book(ctx.db, ctx.ontology, action.domain, booking ? *booking : empty, entity, ctx.refs, ctx.ledger);
  out.status = b.status;
  out.result.payload = b.result ? b.result->render() : BookingResult{action.domain, py::Value(py::List{})}.render();
  return out;
}

}  // namespace todflow
