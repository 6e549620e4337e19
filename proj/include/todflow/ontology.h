#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace todflow {

class OntologyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SlotKind { kSearch, kBooking, kRequestable };

std::string_view to_string(SlotKind kind);

struct SlotSpec {
  std::string name;
  SlotKind kind = SlotKind::kSearch;
  // Closed slots list their candidates; open slots leave this empty.
  std::optional<std::vector<std::string>> candidate_values;
  bool open_valued = false;
  // Database attribute the slot maps to, when it differs from `name`.
  std::string db_field;

  const std::string& field() const { return db_field.empty() ? name : db_field; }
  bool operator==(const SlotSpec&) const = default;
};

struct PlanSpec {
  std::string name;
  std::vector<SlotSpec> slots;
  bool operator==(const PlanSpec&) const = default;
};

struct DomainSpec {
  std::string name;
  std::vector<PlanSpec> plans;
  // Information the user can ask for; these name the [domain_slot]
  // placeholders in delexicalized templates.
  std::vector<SlotSpec> requestable;
  bool operator==(const DomainSpec&) const = default;
};

enum class SlotVerdict { kValid, kInvalid, kOpen };

// Immutable after construction; all lookups are const.
class Ontology {
 public:
  Ontology() = default;
  Ontology(std::string version, std::vector<DomainSpec> domains,
           std::map<std::string, std::string> aliases = {});

  const std::string& version() const { return version_; }
  const std::vector<DomainSpec>& domains() const { return domains_; }
  const std::map<std::string, std::string>& aliases() const { return aliases_; }

  const DomainSpec* find_domain(std::string_view domain) const;
  const PlanSpec* find_plan(std::string_view domain, std::string_view plan) const;
  // Search/booking slot first, then requestable.
  const SlotSpec* find_slot(std::string_view domain, std::string_view slot) const;

  const std::vector<SlotSpec>& slots_for(std::string_view domain, std::string_view plan) const;

  SlotVerdict validate_slot_value(std::string_view domain, std::string_view slot,
                                  std::string_view value) const;

  bool is_search_slot(std::string_view domain, std::string_view slot) const;
  bool is_booking_slot(std::string_view domain, std::string_view slot) const;
  bool is_requestable(std::string_view domain, std::string_view slot) const;

  // Short act-level names (Ref, Addr, Post, ...) <-> canonical slot names.
  // Unknown aliases map to their lowercase form.
  std::string canonical_slot(std::string_view alias) const;

  bool operator==(const Ontology&) const = default;

 private:
  std::string version_;
  std::vector<DomainSpec> domains_;
  std::map<std::string, std::string> aliases_;
};

Ontology load_ontology(std::string_view document);
Ontology load_ontology_file(const std::filesystem::path& path);
Ontology ontology_from_json(const nlohmann::ordered_json& doc);
nlohmann::ordered_json ontology_to_json(const Ontology& ontology);
std::string serialize_ontology(const Ontology& ontology);

}  // namespace todflow
