#pragma once

// Inform / Success / BLEU / Combined over replayed dialogues.

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "todflow/db.h"
#include "todflow/flow.h"
#include "todflow/goal.h"

namespace todflow {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// BLEU-4, uniform weights, brevity penalty, one reference per hypothesis,
// scaled to [0, 100]. Sentences are whitespace-tokenized.
double corpus_bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references);

double combined_score(double inform, double success, double bleu);

// What one dialogue's system side produced, as seen by the evaluator.
struct DialogueOutputs {
  std::string id;
  std::vector<std::string> delex;             // per turn, "" when absent
  std::vector<std::vector<SlotMap>> belief;   // slots_search per turn
};

struct DomainVerdict {
  std::string domain;
  bool informed = false;
  std::vector<std::string> provided;  // requested slots the system gave
  std::vector<std::string> missing;
};

struct DialogueVerdict {
  std::string id;
  bool inform = false;
  bool success = false;
  std::vector<DomainVerdict> domains;
};

// Offered entities are tracked through [domain_name] / [domain_id]
// placeholders and resolved with the belief state of the offering turn.
DialogueVerdict judge_dialogue(const DialogueOutputs& out, const GoalSpec& goal, const Database& db,
                               const Ontology& ontology);

struct Rates {
  double inform = 0;
  double success = 0;
};
// Throws EvaluationError on an empty corpus.
Rates rates(const std::vector<DialogueVerdict>& verdicts);

DialogueOutputs outputs_from_traces(const std::string& id, const std::vector<TurnTrace>& traces);
DialogueOutputs outputs_from_record(const ConversationRecord& conv);

struct DialogueReport {
  DialogueVerdict verdict;
  size_t turns = 0;
  size_t replayed = 0;
  size_t block_mismatches = 0;  // against gold, present blocks only
  std::optional<std::string> error;
};

struct EvalReport {
  Mode mode = Mode::kEndToEnd;
  Variant variant = Variant::kFull;
  size_t k = 5;
  std::string generator;
  double inform = 0, success = 0, bleu = 0, combined = 0;
  size_t dialogues = 0, turns = 0;
  std::vector<DialogueReport> per_dialogue;

  nlohmann::ordered_json to_json() const;
  std::string table_row() const;
  static std::string table_header();
};

EvalReport evaluate(const std::vector<ConversationRecord>& corpus, const std::vector<GoalSpec>& goals, Mode mode,
                    std::shared_ptr<Generator> generator, const Database& db, const Ontology& ontology,
                    const FlowConfig& config);

}  // namespace todflow
