#include "todflow/evaluation.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <mutex>
#include <thread>

#include "todflow/delex.h"
#include "todflow/text.h"

namespace todflow {

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, size_t> ngram_counts(const std::vector<std::string>& toks, size_t n) {
  std::map<Ngram, size_t> out;
  for (size_t i = 0; i + n <= toks.size(); ++i) ++out[Ngram(toks.begin() + i, toks.begin() + i + n)];
  return out;
}

const std::vector<std::string> kCheckedRequests{"phone", "address", "postcode", "reference", "id"};

std::set<std::string> all_matches(const Database& db, const Ontology& ontology, const SlotMap& slots) {
  std::set<std::string> out;
  QueryConstraints q = constraints_from_slots(ontology, slots);
  SearchResult r = db.search(q, db.records(slots.domain).size());
  for (const auto& rec : r.sample)
    if (auto id = rec.identity()) out.insert(id->second);
  return out;
}

std::vector<std::string> ordered_matches(const Database& db, const Ontology& ontology, const SlotMap& slots) {
  std::vector<std::string> out;
  QueryConstraints q = constraints_from_slots(ontology, slots);
  SearchResult r = db.search(q, db.records(slots.domain).size());
  for (const auto& rec : r.sample)
    if (auto id = rec.identity()) out.push_back(id->second);
  return out;
}

}  // namespace

double corpus_bleu(const std::vector<std::string>& hypotheses, const std::vector<std::string>& references) {
  if (hypotheses.size() != references.size())
    throw std::invalid_argument("hypothesis and reference counts differ");
  constexpr size_t kMaxN = 4;
  size_t matched[kMaxN] = {0, 0, 0, 0};
  size_t total[kMaxN] = {0, 0, 0, 0};
  size_t hyp_len = 0, ref_len = 0;
  for (size_t i = 0; i < hypotheses.size(); ++i) {
    auto h = split_whitespace(hypotheses[i]);
    auto r = split_whitespace(references[i]);
    hyp_len += h.size();
    ref_len += r.size();
    for (size_t n = 1; n <= kMaxN; ++n) {
      auto hc = ngram_counts(h, n);
      auto rc = ngram_counts(r, n);
      for (const auto& [g, c] : hc) {
        auto it = rc.find(g);
        matched[n - 1] += std::min(c, it == rc.end() ? size_t{0} : it->second);
        total[n - 1] += c;
      }
    }
  }
  if (hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (size_t n = 0; n < kMaxN; ++n) {
    if (matched[n] == 0 || total[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matched[n]) / static_cast<double>(total[n])) / kMaxN;
  }
  double bp = hyp_len > ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * bp * std::exp(log_sum);
}

double combined_score(double inform, double success, double bleu) { return 0.5 * (inform + success) + bleu; }

DialogueVerdict judge_dialogue(const DialogueOutputs& out, const GoalSpec& goal, const Database& db,
                               const Ontology& ontology) {
  DialogueVerdict v;
  v.id = out.id;
  v.inform = true;
  v.success = true;
  for (const auto& g : goal.domains) {
    if (!ontology.find_domain(g.domain) || !db.has_domain(g.domain)) continue;
    DomainVerdict dv;
    dv.domain = g.domain;
    const std::string name_ph = placeholder_for(g.domain, "name");
    const std::string id_ph = placeholder_for(g.domain, "id");
    const std::string ref_ph = placeholder_for(g.domain, "reference");

    std::vector<std::string> offered;
    bool offered_once = false;
    std::set<std::string> provided;
    for (size_t t = 0; t < out.delex.size(); ++t) {
      auto phs = placeholders_in(out.delex[t]);
      auto has = [&](const std::string& p) { return std::find(phs.begin(), phs.end(), p) != phs.end(); };
      if (has(name_ph) || has(id_ph) || has(ref_ph)) {
        SlotMap belief{g.domain, {}};
        if (t < out.belief.size())
          for (const auto& m : out.belief[t])
            if (m.domain == g.domain) belief = m;
        auto venues = ordered_matches(db, ontology, belief);
        bool subset = std::all_of(venues.begin(), venues.end(), [&](const std::string& x) {
          return std::find(offered.begin(), offered.end(), x) != offered.end();
        });
        if (!offered_once || !subset) offered = venues;
        offered_once = true;
      }
      for (const auto& s : kCheckedRequests)
        if (has(placeholder_for(g.domain, s))) provided.insert(s);
    }

    const bool needs_entity = !g.info.empty();
    if (needs_entity) {
      auto goal_venues = all_matches(db, ontology, SlotMap{g.domain, g.info});
      bool wants_id = std::find(g.reqt.begin(), g.reqt.end(), "id") != g.reqt.end();
      if (!offered_once && g.domain == "train" && !wants_id)
        dv.informed = true;
      else
        dv.informed = !offered.empty() && goal_venues.count(offered.front()) != 0;
    } else {
      dv.informed = true;
    }

    std::vector<std::string> required;
    for (const auto& r : g.reqt)
      if (std::find(kCheckedRequests.begin(), kCheckedRequests.end(), r) != kCheckedRequests.end()) required.push_back(r);
    if (g.book && std::find(required.begin(), required.end(), "reference") == required.end())
      required.push_back("reference");
    for (const auto& r : required) (provided.count(r) ? dv.provided : dv.missing).push_back(r);

    v.inform = v.inform && dv.informed;
    v.success = v.success && dv.informed && dv.missing.empty();
    v.domains.push_back(std::move(dv));
  }
  v.success = v.success && v.inform;
  return v;
}

Rates rates(const std::vector<DialogueVerdict>& verdicts) {
  if (verdicts.empty()) throw EvaluationError("no dialogues to evaluate");
  double inform = 0, success = 0;
  for (const auto& v : verdicts) {
    inform += v.inform ? 1 : 0;
    success += v.success ? 1 : 0;
  }
  double n = static_cast<double>(verdicts.size());
  return {100.0 * inform / n, 100.0 * success / n};
}

DialogueOutputs outputs_from_traces(const std::string& id, const std::vector<TurnTrace>& traces) {
  DialogueOutputs out;
  out.id = id;
  for (const auto& t : traces) {
    const BlockTrace* d = t.find(Block::kDelex);
    out.delex.push_back(d ? d->value : "");
    const BlockTrace* s = t.find(Block::kSlotsSearch);
    out.belief.push_back(s ? parse_slot_maps(s->value) : std::vector<SlotMap>{});
  }
  return out;
}

DialogueOutputs outputs_from_record(const ConversationRecord& conv) {
  DialogueOutputs out;
  out.id = conv.id;
  for (const auto& t : conv.turns) {
    out.delex.push_back(t.delex.value_or(""));
    out.belief.push_back(t.slots_search.value_or(std::vector<SlotMap>{}));
  }
  return out;
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = to_string(mode);
  j["variant"] = to_string(variant);
  j["k"] = k;
  j["generator"] = generator;
  j["inform"] = inform;
  j["success"] = success;
  j["bleu"] = bleu;
  j["combined"] = combined;
  j["dialogues"] = dialogues;
  j["turns"] = turns;
  auto per = nlohmann::ordered_json::array();
  for (const auto& d : per_dialogue) {
    nlohmann::ordered_json e;
    e["id"] = d.verdict.id;
    e["inform"] = d.verdict.inform;
    e["success"] = d.verdict.success;
    e["turns"] = d.turns;
    e["replayed"] = d.replayed;
    e["block_mismatches"] = d.block_mismatches;
    auto doms = nlohmann::ordered_json::array();
    for (const auto& dv : d.verdict.domains)
      doms.push_back({{"domain", dv.domain}, {"informed", dv.informed}, {"provided", dv.provided}, {"missing", dv.missing}});
    e["domains"] = doms;
    if (d.error) e["error"] = *d.error;
    per.push_back(std::move(e));
  }
  j["per_dialogue"] = per;
  return j;
}

std::string EvalReport::table_header() { return "| Mode | Variant | k | Inform | Success | BLEU | Combined |"; }

std::string EvalReport::table_row() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "| %s | %s | %zu | %.2f | %.2f | %.2f | %.2f |", std::string(to_string(mode)).c_str(),
                std::string(to_string(variant)).c_str(), k, inform, success, bleu, combined);
  return buf;
}

EvalReport evaluate(const std::vector<ConversationRecord>& corpus, const std::vector<GoalSpec>& goals, Mode mode,
                    std::shared_ptr<Generator> generator, const Database& db, const Ontology& ontology,
                    const FlowConfig& config) {
  if (corpus.empty()) throw EvaluationError("no dialogues to evaluate");
  if (goals.size() != corpus.size()) throw EvaluationError("goal count does not match dialogue count");

  std::vector<DialogueReport> reports(corpus.size());
  std::vector<std::vector<TurnTrace>> traces(corpus.size());
  auto work = [&](size_t i) {
    const auto& conv = corpus[i];
    traces[i] = replay(conv, mode, generator, db, ontology, config);
    DialogueReport& r = reports[i];
    r.turns = conv.turns.size();
    r.replayed = 0;
    for (size_t t = 0; t < traces[i].size(); ++t) {
      const TurnTrace& tr = traces[i][t];
      if (tr.error) {
        r.error = "turn " + std::to_string(t) + ": " + *tr.error;
        break;
      }
      ++r.replayed;
      TurnRecord gold = apply_variant(conv.turns[t], config.variant);
      TurnRecord got = tr.record();
      for (Block b : all_blocks())
        if (get_block(gold, b) != get_block(got, b)) ++r.block_mismatches;
    }
    r.verdict = judge_dialogue(outputs_from_traces(conv.id, traces[i]), goals[i], db, ontology);
  };

  size_t workers = generator->concurrent_safe() ? std::max(1u, std::thread::hardware_concurrency()) : 1;
  workers = std::min(workers, corpus.size());
  if (workers <= 1) {
    for (size_t i = 0; i < corpus.size(); ++i) work(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex failure_mu;
    for (size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (size_t i; (i = next++) < corpus.size();) {
          try {
            work(i);
          } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }

  EvalReport rep;
  rep.mode = mode;
  rep.variant = config.variant;
  rep.k = config.k;
  rep.generator = generator->name();
  rep.dialogues = corpus.size();
  std::vector<std::string> hyps, refs;
  std::vector<DialogueVerdict> verdicts;
  for (size_t i = 0; i < corpus.size(); ++i) {
    const auto& conv = corpus[i];
    for (size_t t = 0; t < conv.turns.size(); ++t) {
      const BlockTrace* d = t < traces[i].size() && !traces[i][t].error ? traces[i][t].find(Block::kDelex) : nullptr;
      hyps.push_back(d ? d->value : "");
      refs.push_back(conv.turns[t].delex.value_or(""));
    }
    rep.turns += conv.turns.size();
    verdicts.push_back(reports[i].verdict);
  }
  Rates r = rates(verdicts);
  rep.inform = r.inform;
  rep.success = r.success;
  rep.bleu = corpus_bleu(hyps, refs);
  rep.combined = combined_score(rep.inform, rep.success, rep.bleu);
  rep.per_dialogue = std::move(reports);
  return rep;
}

}  // namespace todflow
