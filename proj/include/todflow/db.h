#pragma once

// Local per-domain entity databases and the simulated back-end API:
// search, booking creation and booking retrieval.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "todflow/ontology.h"
#include "todflow/pyliteral.h"
#include "todflow/wire_format.h"

namespace todflow {

class DbError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EntityRecord {
  std::string domain;
  // Field order is the database file's order; it is preserved in results.
  std::vector<std::pair<std::string, std::string>> attributes;

  const std::string* get(std::string_view field) const;
  // The first of name / trainID / id present, as (field, value).
  std::optional<std::pair<std::string, std::string>> identity() const;
  py::Value to_literal() const;
  bool operator==(const EntityRecord&) const = default;
};

struct QueryConstraints {
  std::string domain;
  // Keyed by database field.
  SlotPairs pairs;
};

struct SearchResult {
  std::int64_t choice = 0;
  std::vector<EntityRecord> sample;

  // "['Choice', 5], ['Sample', [{...}, ...]]"
  std::string render() const;
  static SearchResult parse(std::string_view domain, std::string_view payload);
};

struct BookingResult {
  std::string domain;
  // Either a list of record dicts or a list of [name, value] pairs.
  py::Value booked = py::Value(py::List{});

  // "booked:[...]"
  std::string render() const;
  static BookingResult parse(std::string_view domain, std::string_view payload);
  // Looks a field up across record dicts and alias pairs ("Ref" == "reference").
  std::optional<std::string> field(std::string_view name, const Ontology* ontology = nullptr) const;
  bool operator==(const BookingResult&) const = default;
};

bool is_ignored_constraint(std::string_view value);

class Database {
 public:
  Database() = default;

  // Loads every "<domain>_db.json" in `dir`.
  static Database load_dir(const std::filesystem::path& dir);
  void add_domain(const std::string& domain, std::string_view json_text);

  bool has_domain(std::string_view domain) const { return domains_.count(std::string(domain)) != 0; }
  const std::vector<EntityRecord>& records(std::string_view domain) const;
  std::vector<std::string> domain_names() const;
  std::map<std::string, size_t> counts() const;
  const std::set<std::string>& fields(std::string_view domain) const;

  // choice = matches of all filled constraints; sample = first min(k, choice)
  // matches in database order. arriveBy matches arrival <= constraint and
  // leaveAt departure >= constraint; other fields use normalized equality.
  SearchResult search(const QueryConstraints& constraints, size_t k) const;

  // Every place name appearing in train departure/destination fields.
  std::vector<std::string> place_names() const;

 private:
  struct DomainTable {
    std::vector<EntityRecord> records;
    std::set<std::string> fields;
  };
  std::map<std::string, DomainTable> domains_;
};

// Maps a belief-state slot map onto database fields through the ontology.
QueryConstraints constraints_from_slots(const Ontology& ontology, const SlotMap& slots);

// Per-session record of bookings made and entities last offered.
struct BookingLedger {
  std::map<std::string, BookingResult> bookings;
  std::map<std::string, EntityRecord> offered;
  std::set<std::string> references;
  bool operator==(const BookingLedger&) const = default;
};

// Seeded generator for booking references: 8 characters of [A-Z0-9].
class ReferenceGenerator {
 public:
  explicit ReferenceGenerator(std::uint64_t seed) : rng_(seed) {}
  std::string next();

 private:
  std::mt19937_64 rng_;
};

struct BookOutcome {
  ActStatus status = ActStatus::kNoError;
  std::optional<BookingResult> result;
  std::string missing;  // first unmet requirement when status is nobook
};

BookOutcome book(const Database& db, const Ontology& ontology, const std::string& domain, const SlotMap& booking,
                 const std::optional<EntityRecord>& entity, ReferenceGenerator& refs, BookingLedger& ledger);

std::optional<BookingResult> retrieve_booking(const BookingLedger& ledger, std::string_view domain);

struct ExecuteOutcome {
  DomainPayload result;
  ActStatus status = ActStatus::kNoError;
  bool from_gold = false;
};

struct ExecuteContext {
  const Database& db;
  const Ontology& ontology;
  BookingLedger& ledger;
  ReferenceGenerator& refs;
  size_t k = 5;
};

// Dispatches one API action. For booking actions a supplied gold payload is
// returned unchanged (and recorded in the ledger) instead of simulating.
ExecuteOutcome execute(const ApiAction& action, const std::vector<SlotMap>& search_state,
                       const std::vector<SlotMap>& booking_state, ExecuteContext& ctx,
                       const std::optional<std::string>& gold_payload = std::nullopt);

}  // namespace todflow
