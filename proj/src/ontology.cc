#include "todflow/ontology.h"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "todflow/text.h"

namespace todflow {

namespace {

constexpr std::string_view kFormat = "todflow-ontology";
const std::set<std::string, std::less<>> kSlotlessPlans = {"welcome", "greet", "bye", "reqmore"};

SlotKind parse_kind(const std::string& s) {
  if (s == "search") return SlotKind::kSearch;
  if (s == "booking") return SlotKind::kBooking;
  if (s == "requestable") return SlotKind::kRequestable;
  throw OntologyError("unknown slot kind '" + s + "'");
}

SlotSpec parse_slot(const nlohmann::ordered_json& j, SlotKind default_kind, const std::string& where) {
  if (!j.is_object() || !j.contains("name") || !j["name"].is_string())
    throw OntologyError(where + ": slot needs a string 'name'");
  SlotSpec s;
  s.name = j["name"].get<std::string>();
  if (s.name.empty()) throw OntologyError(where + ": empty slot name");
  s.kind = j.contains("kind") ? parse_kind(j["kind"].get<std::string>()) : default_kind;
  s.open_valued = j.value("open", false);
  if (j.contains("values")) {
    std::vector<std::string> values;
    for (const auto& v : j["values"]) values.push_back(normalize_value(v.get<std::string>()));
    s.candidate_values = std::move(values);
  }
  if (s.open_valued == s.candidate_values.has_value())
    throw OntologyError(where + ": slot '" + s.name + "' must be exactly one of open or valued");
  s.db_field = j.value("db_field", std::string());
  return s;
}

nlohmann::ordered_json slot_to_json(const SlotSpec& s) {
  nlohmann::ordered_json j;
  j["name"] = s.name;
  j["kind"] = std::string(to_string(s.kind));
  if (s.open_valued) j["open"] = true;
  if (s.candidate_values) j["values"] = *s.candidate_values;
  if (!s.db_field.empty()) j["db_field"] = s.db_field;
  return j;
}

}  // namespace

std::string_view to_string(SlotKind kind) {
  switch (kind) {
    case SlotKind::kSearch: return "search";
    case SlotKind::kBooking: return "booking";
    case SlotKind::kRequestable: return "requestable";
  }
  return "search";
}

Ontology::Ontology(std::string version, std::vector<DomainSpec> domains,
                   std::map<std::string, std::string> aliases)
    : version_(std::move(version)), domains_(std::move(domains)), aliases_(std::move(aliases)) {
  std::set<std::string> names;
  for (const auto& d : domains_) {
    if (d.name.empty()) throw OntologyError("empty domain name");
    if (d.name != to_lower(d.name)) throw OntologyError("domain name must be lowercase: " + d.name);
    if (!names.insert(d.name).second) throw OntologyError("duplicate domain: " + d.name);
    std::set<std::string> plans;
    for (const auto& p : d.plans) {
      if (p.name.empty()) throw OntologyError("empty plan name in domain " + d.name);
      if (!plans.insert(p.name).second)
        throw OntologyError("duplicate plan '" + p.name + "' in domain " + d.name);
      if (kSlotlessPlans.count(p.name) && !p.slots.empty())
        throw OntologyError("plan '" + p.name + "' in domain " + d.name + " must not carry slots");
      std::set<std::string> slots;
      for (const auto& s : p.slots)
        if (!slots.insert(s.name).second)
          throw OntologyError("duplicate slot '" + s.name + "' in " + d.name + "/" + p.name);
    }
  }
}

const DomainSpec* Ontology::find_domain(std::string_view domain) const {
  for (const auto& d : domains_)
    if (d.name == domain) return &d;
  return nullptr;
}

const PlanSpec* Ontology::find_plan(std::string_view domain, std::string_view plan) const {
  const DomainSpec* d = find_domain(domain);
  if (!d) return nullptr;
  for (const auto& p : d->plans)
    if (p.name == plan) return &p;
  return nullptr;
}

const SlotSpec* Ontology::find_slot(std::string_view domain, std::string_view slot) const {
  const DomainSpec* d = find_domain(domain);
  if (!d) return nullptr;
  for (const auto& p : d->plans)
    for (const auto& s : p.slots)
      if (s.name == slot) return &s;
  for (const auto& s : d->requestable)
    if (s.name == slot) return &s;
  return nullptr;
}

const std::vector<SlotSpec>& Ontology::slots_for(std::string_view domain, std::string_view plan) const {
  if (!find_domain(domain)) throw OntologyError("unknown domain: " + std::string(domain));
  const PlanSpec* p = find_plan(domain, plan);
  if (!p) throw OntologyError("unknown plan '" + std::string(plan) + "' in domain " + std::string(domain));
  return p->slots;
}

SlotVerdict Ontology::validate_slot_value(std::string_view domain, std::string_view slot,
                                          std::string_view value) const {
  const SlotSpec* s = find_slot(domain, slot);
  if (!s) throw OntologyError("unknown slot '" + std::string(slot) + "' in domain " + std::string(domain));
  std::string v = normalize_value(value);
  if (v == "?") return SlotVerdict::kValid;
  if (s->open_valued) return SlotVerdict::kOpen;
  const auto& c = *s->candidate_values;
  return std::find(c.begin(), c.end(), v) != c.end() ? SlotVerdict::kValid : SlotVerdict::kInvalid;
}

bool Ontology::is_search_slot(std::string_view domain, std::string_view slot) const {
  const PlanSpec* p = find_plan(domain, "search");
  if (!p) return false;
  return std::any_of(p->slots.begin(), p->slots.end(), [&](const SlotSpec& s) { return s.name == slot; });
}

bool Ontology::is_booking_slot(std::string_view domain, std::string_view slot) const {
  const PlanSpec* p = find_plan(domain, "booking");
  if (!p) return false;
  return std::any_of(p->slots.begin(), p->slots.end(), [&](const SlotSpec& s) { return s.name == slot; });
}

bool Ontology::is_requestable(std::string_view domain, std::string_view slot) const {
  const DomainSpec* d = find_domain(domain);
  if (!d) return false;
  return std::any_of(d->requestable.begin(), d->requestable.end(),
                     [&](const SlotSpec& s) { return s.name == slot; });
}

std::string Ontology::canonical_slot(std::string_view alias) const {
  auto it = aliases_.find(std::string(alias));
  if (it != aliases_.end()) return it->second;
  return to_lower(alias);
}

Ontology ontology_from_json(const nlohmann::ordered_json& doc) {
  if (!doc.is_object()) throw OntologyError("ontology document must be an object");
  if (doc.contains("format") && doc["format"] != kFormat)
    throw OntologyError("unexpected ontology format tag");
  std::string version = doc.value("version", std::string());
  std::map<std::string, std::string> aliases;
  if (doc.contains("aliases")) {
    for (const auto& [k, v] : doc["aliases"].items()) aliases[k] = v.get<std::string>();
  }
  std::vector<DomainSpec> domains;
  if (doc.contains("domains")) {
    if (!doc["domains"].is_array()) throw OntologyError("'domains' must be a list");
    for (const auto& dj : doc["domains"]) {
      if (!dj.contains("name") || !dj["name"].is_string()) throw OntologyError("domain needs a 'name'");
      DomainSpec d;
      d.name = dj["name"].get<std::string>();
      for (const auto& pj : dj.value("plans", nlohmann::ordered_json::array())) {
        PlanSpec p;
        p.name = pj.is_string() ? pj.get<std::string>() : pj.at("name").get<std::string>();
        SlotKind kind = p.name == "booking" ? SlotKind::kBooking : SlotKind::kSearch;
        if (pj.is_object()) {
          for (const auto& sj : pj.value("slots", nlohmann::ordered_json::array()))
            p.slots.push_back(parse_slot(sj, kind, d.name + "/" + p.name));
        }
        d.plans.push_back(std::move(p));
      }
      for (const auto& sj : dj.value("requestable", nlohmann::ordered_json::array())) {
        SlotSpec s = parse_slot(sj, SlotKind::kRequestable, d.name + "/requestable");
        s.kind = SlotKind::kRequestable;
        d.requestable.push_back(std::move(s));
      }
      domains.push_back(std::move(d));
    }
  }
  return Ontology(std::move(version), std::move(domains), std::move(aliases));
}

Ontology load_ontology(std::string_view document) {
  nlohmann::ordered_json doc;
  try {
    doc = nlohmann::ordered_json::parse(document);
  } catch (const nlohmann::json::exception& e) {
    throw OntologyError(std::string("malformed ontology document: ") + e.what());
  }
  try {
    return ontology_from_json(doc);
  } catch (const nlohmann::json::exception& e) {
    throw OntologyError(std::string("malformed ontology document: ") + e.what());
  }
}

Ontology load_ontology_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw OntologyError("cannot open ontology file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return load_ontology(ss.str());
}

nlohmann::ordered_json ontology_to_json(const Ontology& ontology) {
  nlohmann::ordered_json doc;
  doc["format"] = std::string(kFormat);
  doc["version"] = ontology.version();
  doc["aliases"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : ontology.aliases()) doc["aliases"][k] = v;
  doc["domains"] = nlohmann::ordered_json::array();
  for (const auto& d : ontology.domains()) {
    nlohmann::ordered_json dj;
    dj["name"] = d.name;
    dj["plans"] = nlohmann::ordered_json::array();
    for (const auto& p : d.plans) {
      nlohmann::ordered_json pj;
      pj["name"] = p.name;
      pj["slots"] = nlohmann::ordered_json::array();
      for (const auto& s : p.slots) pj["slots"].push_back(slot_to_json(s));
      dj["plans"].push_back(std::move(pj));
    }
    dj["requestable"] = nlohmann::ordered_json::array();
    for (const auto& s : d.requestable) dj["requestable"].push_back(slot_to_json(s));
    doc["domains"].push_back(std::move(dj));
  }
  return doc;
}

std::string serialize_ontology(const Ontology& ontology) { return ontology_to_json(ontology).dump(2) + "\n"; }

}  // namespace todflow
