#include "todflow/grounded.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace todflow {

double score_value(Generator& gen, const std::string& context, const std::string& key, const std::string& value,
                   const std::string& key_delimiter, const std::string& value_terminator) {
  if (value.empty()) return 0.0;
  return gen.log_likelihood(context + key + key_delimiter, value + value_terminator);
}

std::vector<double> value_distribution(std::span<const double> scores, double temperature) {
  if (scores.empty()) throw std::invalid_argument("value_distribution: no candidates");
  if (!(temperature > 0.0)) throw std::invalid_argument("value_distribution: temperature must be positive");
  double top = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double total = 0.0;
  for (size_t i = 0; i < scores.size(); ++i) {
    p[i] = std::exp((scores[i] - top) / temperature);
    total += p[i];
  }
  for (double& x : p) x /= total;
  return p;
}

Selection select_value(Generator& gen, const GroundedQuery& query) {
  if (query.candidates.empty()) throw std::invalid_argument("select_value: no candidates");
  Selection sel;
  sel.candidates = query.candidates;
  for (const auto& v : query.candidates)
    sel.scores.push_back(score_value(gen, query.context, query.key, v, query.key_delimiter, query.value_terminator));
  sel.probabilities = value_distribution(sel.scores, query.temperature);
  if (query.mode == SelectMode::kArgmax) {
    sel.index = std::max_element(sel.probabilities.begin(), sel.probabilities.end()) - sel.probabilities.begin();
  } else {
    std::mt19937_64 rng(query.seed);
    sel.index = draw_index(sel.probabilities, rng);
  }
  sel.value = query.candidates[sel.index];
  return sel;
}

GroundedFill fill_slots_grounded(Generator& gen, const std::string& context, const std::string& domain,
                                 const std::vector<GroundedSlot>& slots, double temperature,
                                 const Ontology* ontology, bool ends_line, SelectMode mode, std::uint64_t seed) {
  GroundedFill fill;
  fill.slots.domain = domain;
  std::string prefix = context;
  for (size_t i = 0; i < slots.size(); ++i) {
    const auto& slot = slots[i];
    bool last = i + 1 == slots.size();
    std::string terminator = last && ends_line ? "\n" : ", ";
    std::string value;
    if (slot.candidates) {
      GroundedQuery q;
      q.context = prefix;
      q.key = slot.name;
      q.candidates = *slot.candidates;
      if (std::find(q.candidates.begin(), q.candidates.end(), std::string(kUnfilled)) == q.candidates.end())
        q.candidates.emplace_back(kUnfilled);
      q.temperature = temperature;
      q.mode = mode;
      q.seed = seed + i;
      q.value_terminator = terminator;
      Selection sel = select_value(gen, q);
      value = sel.value;
      fill.selections.emplace_back(slot.name, std::move(sel));
    } else {
      DecodingConfig cfg;
      cfg.stop_sequences = {", ", "\n"};
      cfg.seed = seed + i;
      value = gen.complete(prefix + slot.name + ":", cfg);
      if (value.empty()) value = std::string(kUnfilled);
      if (ontology && ontology->find_slot(domain, slot.name) &&
          ontology->validate_slot_value(domain, slot.name, value) == SlotVerdict::kInvalid)
        fill.invalid.push_back(slot.name);
    }
    fill.slots.pairs.push_back({slot.name, value});
    prefix += slot.name + ":" + value + ", ";
  }
  return fill;
}

std::vector<GroundedSlot> grounded_slots_for(const Ontology& ontology, const std::string& domain,
                                             const std::string& plan) {
  std::vector<GroundedSlot> out;
  for (const auto& s : ontology.slots_for(domain, plan))
    out.push_back({s.name, s.open_valued ? std::nullopt : s.candidate_values});
  return out;
}

}  // namespace todflow
