#pragma once

// Ontology-grounded value selection: candidates are scored by the model's
// likelihood of the value following its key, normalized by a temperature
// softmax, then chosen by argmax or a seeded draw.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "todflow/generator.h"
#include "todflow/ontology.h"
#include "todflow/wire_format.h"

namespace todflow {

enum class SelectMode { kArgmax, kSample };

struct GroundedQuery {
  std::string context;
  std::string key;
  std::vector<std::string> candidates;
  double temperature = 1.0;
  SelectMode mode = SelectMode::kArgmax;
  std::uint64_t seed = 0;
  // Slot keys are rendered "key:", block keys "key: ".
  std::string key_delimiter = ":";
  // Appended to every candidate so the score covers the value's end too.
  std::string value_terminator;
};

struct Selection {
  std::string value;
  size_t index = 0;
  std::vector<std::string> candidates;
  std::vector<double> scores;
  std::vector<double> probabilities;
};

double score_value(Generator& gen, const std::string& context, const std::string& key, const std::string& value,
                   const std::string& key_delimiter = ":", const std::string& value_terminator = "");

// Throws std::invalid_argument on an empty list or temperature <= 0.
std::vector<double> value_distribution(std::span<const double> scores, double temperature);

Selection select_value(Generator& gen, const GroundedQuery& query);

struct GroundedSlot {
  std::string name;
  std::optional<std::vector<std::string>> candidates;  // nullopt = open-valued
};

struct GroundedFill {
  SlotMap slots;
  // One entry per closed slot, in slot order.
  std::vector<std::pair<std::string, Selection>> selections;
  // Open slots whose generated value failed ontology validation.
  std::vector<std::string> invalid;
};

// `context` ends where the first slot key would start, e.g.
// "...slots_search: domain:train, ". Closed slots choose among their
// candidates plus "?"; open slots are generated and then validated.
GroundedFill fill_slots_grounded(Generator& gen, const std::string& context, const std::string& domain,
                                 const std::vector<GroundedSlot>& slots, double temperature,
                                 const Ontology* ontology = nullptr, bool ends_line = true,
                                 SelectMode mode = SelectMode::kArgmax, std::uint64_t seed = 0);

std::vector<GroundedSlot> grounded_slots_for(const Ontology& ontology, const std::string& domain,
                                             const std::string& plan);

}  // namespace todflow
