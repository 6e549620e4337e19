#pragma once

// Per-dialogue user goals: what the user is looking for in each domain and
// which pieces of information they ask for.

#include <string>
#include <vector>

#include "json.hpp"
#include "todflow/ontology.h"
#include "todflow/wire_format.h"

namespace todflow {

struct DomainGoal {
  std::string domain;
  SlotPairs info;                  // informable constraints, ontology slot names
  std::vector<std::string> reqt;   // requested slots, ontology slot names
  bool book = false;
  bool operator==(const DomainGoal&) const = default;
};

struct GoalSpec {
  std::vector<DomainGoal> domains;
  const DomainGoal* find(std::string_view domain) const;
  bool operator==(const GoalSpec&) const = default;
};

// Reads a MultiWOZ "goal" object. Domains absent from the ontology are
// skipped; request names given as database fields are mapped to slot names.
GoalSpec goal_from_corpus(const nlohmann::ordered_json& goal, const Ontology& ontology);

nlohmann::ordered_json goal_to_json(const GoalSpec& goal);
GoalSpec goal_from_json(const nlohmann::ordered_json& j);

}  // namespace todflow
