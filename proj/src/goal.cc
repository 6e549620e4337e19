#include "todflow/goal.h"

#include "todflow/text.h"

namespace todflow {

const DomainGoal* GoalSpec::find(std::string_view domain) const {
  for (const auto& d : domains)
    if (d.domain == domain) return &d;
  return nullptr;
}

namespace {

std::string slot_name_for(const Ontology& ontology, const std::string& domain, const std::string& key) {
  if (ontology.find_slot(domain, key)) return key;
  if (const DomainSpec* d = ontology.find_domain(domain)) {
    for (const auto& s : d->requestable)
      if (s.field() == key) return s.name;
    for (const auto& p : d->plans)
      for (const auto& s : p.slots)
        if (s.field() == key) return s.name;
  }
  return ontology.canonical_slot(key);
}

}  // namespace

GoalSpec goal_from_corpus(const nlohmann::ordered_json& goal, const Ontology& ontology) {
  GoalSpec out;
  if (!goal.is_object()) return out;
  for (const auto& [domain, body] : goal.items()) {
    if (!body.is_object() || body.empty() || !ontology.find_domain(domain)) continue;
    DomainGoal g;
    g.domain = domain;
    if (body.contains("info") && body["info"].is_object())
      for (const auto& [k, v] : body["info"].items())
        g.info.push_back({slot_name_for(ontology, domain, k), normalize_value(v.is_string() ? v.get<std::string>() : v.dump())});
    if (body.contains("reqt") && body["reqt"].is_array())
      for (const auto& r : body["reqt"]) g.reqt.push_back(slot_name_for(ontology, domain, r.get<std::string>()));
    g.book = body.contains("book") && body["book"].is_object() && !body["book"].empty();
    out.domains.push_back(std::move(g));
  }
  return out;
}

nlohmann::ordered_json goal_to_json(const GoalSpec& goal) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& d : goal.domains) {
    nlohmann::ordered_json info = nlohmann::ordered_json::object();
    for (const auto& p : d.info) info[p.slot] = p.value;
    j[d.domain] = {{"info", info}, {"reqt", d.reqt}, {"book", d.book}};
  }
  return j;
}

GoalSpec goal_from_json(const nlohmann::ordered_json& j) {
  GoalSpec out;
  for (const auto& [domain, body] : j.items()) {
    DomainGoal g;
    g.domain = domain;
    const auto info = body.value("info", nlohmann::ordered_json::object());
    for (const auto& [k, v] : info.items()) g.info.push_back({k, v.get<std::string>()});
    const auto reqt = body.value("reqt", nlohmann::ordered_json::array());
    for (const auto& r : reqt) g.reqt.push_back(r.get<std::string>());
    g.book = body.value("book", false);
    out.domains.push_back(std::move(g));
  }
  return out;
}

}  // namespace todflow
