#include "todflow/flow.h"

#include <algorithm>
#include <chrono>
#include <regex>
#include <set>

#include "todflow/delex.h"
#include "todflow/text.h"

namespace todflow {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

bool in_range(Block b, Block lo, Block hi) { return b >= lo && b <= hi; }

// Blocks a mode takes from gold instead of generating.
bool from_gold(Mode m, Block b) {
  switch (m) {
    case Mode::kEndToEnd:
      return false;
    case Mode::kContextState:
      return in_range(b, Block::kIntents, Block::kSlotsRequestable);
    case Mode::kContextResult:
      return in_range(b, Block::kIntents, Block::kResults);
  }
  return false;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return trim(s);
}

std::string collapse(std::string_view s) { return join(split_whitespace(s), " "); }

class TurnAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- lexicalization helpers ----

std::optional<std::string> extract(std::string_view kind, const std::string& value) {
  auto tokens = split_whitespace(value);
  if (kind == "price") {
    for (const auto& t : tokens)
      if (is_decimal_token(t) || is_integer_token(t)) return t;
    return std::nullopt;
  }
  if (kind == "time") {
    for (const auto& t : tokens)
      if (is_clock_token(t)) return t;
    return std::nullopt;
  }
  if (kind == "count") {
    for (const auto& t : tokens)
      if (is_integer_token(t)) return t;
    return std::nullopt;
  }
  std::string v = trim(value);
  if (v.empty()) return std::nullopt;
  return v;
}

const std::vector<std::string>& value_slots(std::string_view kind) {
  static const std::map<std::string, std::vector<std::string>, std::less<>> table{
      {"count", {"choice", "people", "stay"}},
      {"time", {"leaveAt", "arriveBy", "time"}},
      {"price", {"price", "entrance"}},
      {"day", {"day"}},
      {"area", {"area"}},
      {"place", {"departure", "destination"}},
  };
  static const std::vector<std::string> none;
  auto it = table.find(kind);
  return it == table.end() ? none : it->second;
}

bool usable(const std::string& v) {
  std::string n = normalize_value(v);
  return !n.empty() && n != "?" && n != "none" && n != "dontcare" && n != "not mentioned";
}

}  // namespace

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::kEndToEnd:
      return "END_TO_END";
    case Mode::kContextState:
      return "CONTEXT_STATE";
    case Mode::kContextResult:
      return "CONTEXT_RESULT";
  }
  return "";
}

Mode parse_mode(std::string_view s) {
  std::string v = to_lower(s);
  if (v == "end_to_end" || v == "e2e") return Mode::kEndToEnd;
  if (v == "context_state" || v == "ctx-state") return Mode::kContextState;
  if (v == "context_result" || v == "ctx-result") return Mode::kContextResult;
  throw std::invalid_argument("unknown mode '" + std::string(s) + "'");
}

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::kGenerated:
      return "generated";
    case Provenance::kOverridden:
      return "overridden";
    case Provenance::kGold:
      return "gold";
    case Provenance::kBackend:
      return "backend";
  }
  return "";
}

const BlockTrace* TurnTrace::find(Block b) const {
  for (const auto& bt : blocks)
    if (bt.block == b) return &bt;
  return nullptr;
}

TurnRecord TurnTrace::record() const {
  TurnRecord r;
  for (const auto& bt : blocks) set_block(r, bt.block, bt.value);
  return r;
}

std::string TurnTrace::response() const {
  const BlockTrace* s = find(Block::kSys);
  return s ? s->value : std::string();
}

nlohmann::json trace_to_json(const TurnTrace& trace, Variant variant) {
  using nlohmann::json;
  json blocks = json::array();
  for (const auto& bt : trace.blocks) {
    json b{{"key", block_key(bt.block)}, {"value", bt.value}, {"provenance", to_string(bt.provenance)}};
    if (!bt.distributions.empty()) {
      json d = json::array();
      for (const auto& sd : bt.distributions)
        d.push_back({{"domain", sd.domain},
                     {"slot", sd.slot},
                     {"chosen", sd.selection.value},
                     {"candidates", sd.selection.candidates},
                     {"scores", sd.selection.scores},
                     {"probabilities", sd.selection.probabilities}});
      b["distribution"] = d;
    }
    blocks.push_back(std::move(b));
  }
  json skipped = json::array();
  for (Block b : trace.skipped) skipped.push_back(block_key(b));
  json failures = json::array();
  for (const auto& f : trace.failures) {
    json j{{"block", block_key(f.block)}, {"kind", f.kind}, {"detail", f.detail}};
    if (f.generated) j["generated"] = *f.generated;
    if (f.computed) j["computed"] = *f.computed;
    failures.push_back(std::move(j));
  }
  json out{{"turn", trace.index},
           {"mode", to_string(trace.mode)},
           {"blocks", blocks},
           {"skipped", skipped},
           {"verification_failures", failures},
           {"lexicalized", trace.lexicalized},
           {"unresolved_placeholders", trace.unresolved},
           {"template_divergence", trace.template_divergence},
           {"timings_ms", {{"stage1", trace.stage1_ms}, {"backend", trace.backend_ms}, {"stage2", trace.stage2_ms}}},
           {"response", trace.response()},
           {"error", trace.error ? json(*trace.error) : json(nullptr)}};
  if (!trace.error) out["wire"] = serialize_turn(trace.record(), variant);
  return out;
}

void check_overrides(const Overrides& o) {
  for (const auto& [b, v] : o) {
    if (b == Block::kUsr) throw OverrideError("the user utterance cannot be overridden");
    if (b == Block::kResults) throw OverrideError("results come from the backend and cannot be overridden");
    if (v.empty()) continue;
    if (v.find('\n') != std::string::npos) throw OverrideError(std::string(block_key(b)) + ": value spans lines");
    TurnRecord probe;
    try {
      set_block(probe, b, v);
    } catch (const WireFormatError& e) {
      throw OverrideError(std::string(block_key(b)) + ": " + e.what());
    }
  }
}

Overrides parse_overrides(const nlohmann::json& j) {
  Overrides out;
  if (j.is_null()) return out;
  if (!j.is_object()) throw OverrideError("overrides must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto b = block_from_key(it.key());
    if (!b) throw OverrideError("unknown block '" + it.key() + "'");
    if (!it.value().is_string()) throw OverrideError(it.key() + ": value must be a string");
    out[*b] = it.value().get<std::string>();
  }
  check_overrides(out);
  return out;
}

SlotPairs update_all_entities(const SlotPairs& prev, const SlotPairs& fresh) {
  SlotPairs out;
  std::set<std::string> keys;
  for (const auto& e : fresh)
    if (keys.insert(e.slot).second) out.push_back(e);
  for (const auto& e : prev)
    if (!keys.count(e.slot)) out.push_back(e);
  return out;
}

std::vector<std::string> update_all_domains(const std::vector<std::string>& prev,
                                            const std::vector<std::string>& fresh) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& d : fresh)
    if (seen.insert(d).second) out.push_back(d);
  for (const auto& d : prev)
    if (seen.insert(d).second) out.push_back(d);
  return out;
}

Lexicalized lexicalize(const std::string& delex, const std::vector<DialogueAct>& dlg_acts,
                       const std::vector<DomainPayload>& results, const TurnRecord& state,
                       const Ontology& ontology) {
  std::vector<SearchResult> searches;
  std::vector<std::string> search_domains;
  std::vector<BookingResult> bookings;
  for (const auto& r : results) {
    try {
      if (r.payload.rfind("booked:", 0) == 0) {
        bookings.push_back(BookingResult::parse(r.domain, r.payload));
      } else {
        searches.push_back(SearchResult::parse(r.domain, r.payload));
        search_domains.push_back(r.domain);
      }
    } catch (const std::exception&) {
    }
  }

  auto candidates = [&](const std::string& domain, const std::string& slot) {
    std::vector<std::string> out;
    auto add = [&](const std::optional<std::string>& v) {
      if (v && usable(*v) && std::find(out.begin(), out.end(), *v) == out.end()) out.push_back(*v);
    };
    const bool typed = domain == "value";
    const std::vector<std::string> slots = typed ? value_slots(slot) : std::vector<std::string>{slot};
    auto wanted = [&](const std::string& d, const std::string& s) {
      if (!typed && d != domain) return false;
      return std::find(slots.begin(), slots.end(), s) != slots.end();
    };
    auto take = [&](const std::string& v) { return typed ? extract(slot, v) : std::optional<std::string>(trim(v)); };

    for (const auto& a : dlg_acts)
      if (a.slot_values)
        for (const auto& p : *a.slot_values)
          if (wanted(a.domain, ontology.canonical_slot(p.slot))) add(take(p.value));
    for (size_t i = 0; i < searches.size(); ++i) {
      const std::string& d = search_domains[i];
      if (typed && slot == "count") add(std::to_string(searches[i].choice));
      for (const auto& rec : searches[i].sample)
        for (const auto& s : slots) {
          if (!wanted(d, s)) continue;
          const SlotSpec* spec = ontology.find_slot(d, s);
          const std::string* v = rec.get(spec ? spec->field() : s);
          if (v) add(take(*v));
        }
    }
    for (const auto& b : bookings)
      for (const auto& s : slots)
        if (wanted(b.domain, s))
          if (auto v = b.field(s, &ontology)) add(take(*v));
    for (const auto* maps : {&state.slots_search, &state.slots_booking})
      if (*maps)
        for (const auto& m : **maps)
          for (const auto& p : m.pairs)
            if (wanted(m.domain, p.slot)) add(take(p.value));
    return out;
  };

  Lexicalized out;
  static const std::regex placeholder(R"(\[([a-z]+)_([A-Za-z]+)\])");
  std::map<std::string, size_t> seen;
  size_t pos = 0;
  for (auto it = std::sregex_iterator(delex.begin(), delex.end(), placeholder); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    out.text.append(delex, pos, m.position(0) - pos);
    pos = m.position(0) + m.length(0);
    std::string token = m.str(0);
    auto values = candidates(m.str(1), m.str(2));
    size_t n = seen[token]++;
    if (values.empty()) {
      out.text += token;
      out.unresolved.push_back(token);
    } else {
      out.text += values[std::min(n, values.size() - 1)];
    }
  }
  out.text.append(delex, pos, std::string::npos);
  return out;
}

bool diverges_from_template(const std::string& delex, const std::string& response) {
  static const std::regex placeholder(R"(\[[a-z]+_[A-Za-z]+\])");
  static const std::regex special(R"([.^$|()\[\]{}*+?\\])");
  std::string tmpl = collapse(delex);
  std::string pattern = "^";
  size_t pos = 0;
  for (auto it = std::sregex_iterator(tmpl.begin(), tmpl.end(), placeholder); it != std::sregex_iterator(); ++it) {
    pattern += std::regex_replace(tmpl.substr(pos, it->position(0) - pos), special, R"(\$&)");
    pattern += "(.+?)";
    pos = it->position(0) + it->length(0);
  }
  pattern += std::regex_replace(tmpl.substr(pos), special, R"(\$&)") + "$";
  try {
    return !std::regex_match(collapse(normalize_utterance(response)), std::regex(pattern));
  } catch (const std::regex_error&) {
    return true;
  }
}

FlowConfig::FlowConfig() { decoding.max_new_tokens = 512; }

Session::Session(std::shared_ptr<Generator> generator, const Database& db, const Ontology& ontology,
                 FlowConfig config)
    : gen_(std::move(generator)), db_(db), ontology_(ontology), config_(std::move(config)), refs_(config_.seed) {
  if (!gen_) throw std::invalid_argument("session needs a generator");
  config_.decoding.validate();
  prompt_history_ = std::string(kConversationSep) + "\n";
}

Session::Outcome Session::run_turn(size_t index, const TurnInput& in, const Overrides& overrides,
                                   const Preset& preset, Snapshot& snap) {
  Outcome out;
  TurnTrace& trace = out.trace;
  trace.index = index;
  trace.mode = in.mode;
  TurnRecord& rec = out.full;
  out.ledger = snap.ledger;
  out.refs = snap.refs;
  const TurnRecord& memory = snap.memory;
  const Variant variant = config_.variant;

  std::optional<TurnRecord> gold;
  if (in.gold) gold = *in.gold;
  if (in.mode != Mode::kEndToEnd && !gold)
    throw std::invalid_argument(std::string(to_string(in.mode)) + " needs the gold turn");

  std::string current;
  auto emit = [&](Block b, Provenance p, std::vector<SlotDistribution> dist = {}) {
    auto v = get_block(rec, b);
    if (!v) return;
    trace.blocks.push_back({b, *v, p, std::move(dist)});
    current += std::string(block_key(b)) + ": " + *v + "\n";
  };
  auto prompt_for = [&](Block b) { return snap.prompt_history + current + std::string(block_key(b)) + ": "; };
  auto decoding_for = [&](Block b) {
    DecodingConfig cfg = config_.decoding;
    cfg.stop_sequences.push_back("\n");
    cfg.seed = config_.seed + index * kBlockCount + static_cast<size_t>(b);
    return cfg;
  };
  // nullopt = the generator skipped the block.
  auto generate = [&](Block b) -> std::optional<std::string> {
    std::string text = gen_->complete(prompt_for(b), decoding_for(b));
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (trim(text) == kSkipToken) return std::nullopt;
    return text;
  };
  auto store = [&](Block b, const std::optional<std::string>& v) {
    try {
      set_block(rec, b, v);
    } catch (const WireFormatError& e) {
      throw TurnAbort("unparseable " + std::string(block_key(b)) + ": " + e.what());
    }
  };
  auto computed_all_entities = [&]() -> std::optional<std::string> {
    SlotPairs ae = update_all_entities(memory.all_entities.value_or(SlotPairs{}), rec.entities.value_or(SlotPairs{}));
    if (ae.empty()) return std::nullopt;
    return render_pairs(ae);
  };
  auto computed_all_domains = [&]() -> std::optional<std::string> {
    auto ad = update_all_domains(memory.all_domains.value_or(std::vector<std::string>{}),
                                 rec.domains.value_or(std::vector<std::string>{}));
    if (ad.empty()) return std::nullopt;
    return join(ad, ", ");
  };

  auto grounded_maps = [&](Block b, std::vector<SlotDistribution>& dist) -> std::optional<std::string> {
    const char* plan = b == Block::kSlotsSearch ? "search" : "booking";
    std::vector<SlotMap> maps;
    std::vector<std::string> domains;
    for (const auto& d : rec.domains.value_or(std::vector<std::string>{}))
      if (ontology_.find_plan(d, plan) && !grounded_slots_for(ontology_, d, plan).empty()) domains.push_back(d);
    for (size_t i = 0; i < domains.size(); ++i) {
      std::string ctx = prompt_for(b);
      if (!maps.empty()) ctx += render_slot_maps(maps) + ", ";
      ctx += "domain:" + domains[i] + ", ";
      GroundedFill fill = fill_slots_grounded(*gen_, ctx, domains[i], grounded_slots_for(ontology_, domains[i], plan),
                                              config_.grounded_temperature, &ontology_, i + 1 == domains.size(),
                                              config_.grounded_mode, decoding_for(b).seed + i * 64);
      for (auto& [slot, sel] : fill.selections) dist.push_back({domains[i], slot, std::move(sel)});
      for (const auto& s : fill.invalid)
        trace.failures.push_back({b, "invalid_value", domains[i] + "." + s, std::nullopt, std::nullopt});
      maps.push_back(std::move(fill.slots));
    }
    if (maps.empty()) return std::nullopt;
    return render_slot_maps(maps);
  };

  auto verify = [&](Block b) {
    if (b == Block::kDomains && rec.domains) {
      for (const auto& d : *rec.domains)
        if (!ontology_.find_domain(d))
          trace.failures.push_back({b, "unknown_domain", d, std::nullopt, std::nullopt});
    }
    if ((b == Block::kSlotsSearch && rec.slots_search) || (b == Block::kSlotsBooking && rec.slots_booking)) {
      const auto& maps = b == Block::kSlotsSearch ? *rec.slots_search : *rec.slots_booking;
      for (const auto& m : maps)
        for (const auto& p : m.pairs)
          if (!is_ignored_constraint(p.value) &&
              ontology_.validate_slot_value(m.domain, p.slot, p.value) == SlotVerdict::kInvalid)
            trace.failures.push_back({b, "invalid_value", m.domain + "." + p.slot + "=" + p.value, std::nullopt,
                                      std::nullopt});
    }
  };

  auto backend = [&]() -> Provenance {
    if (!rec.api_acts || rec.api_acts->empty()) return Provenance::kBackend;
    std::vector<DomainPayload> results;
    std::set<size_t> used;
    bool all_gold = true;
    ExecuteContext ctx{db_, ontology_, out.ledger, out.refs, config_.k};
    const auto& acts = *rec.api_acts;
    for (size_t i = 0; i < acts.size(); ++i) {
      const ApiAction& a = acts[i];
      std::optional<std::string> gold_payload;
      if (a.plan == "booking" && gold && gold->results) {
        const auto& gr = *gold->results;
        bool aligned = gold->api_acts && *gold->api_acts == acts && gr.size() == acts.size();
        if (aligned && gr[i].payload.rfind("booked:", 0) == 0) {
          gold_payload = gr[i].payload;
          used.insert(i);
        } else {
          for (size_t j = 0; j < gr.size(); ++j)
            if (!used.count(j) && gr[j].domain == a.domain && gr[j].payload.rfind("booked:", 0) == 0) {
              gold_payload = gr[j].payload;
              used.insert(j);
              break;
            }
        }
      }
      try {
        ExecuteOutcome r = execute(a, rec.slots_search.value_or(std::vector<SlotMap>{}),
                                   rec.slots_booking.value_or(std::vector<SlotMap>{}), ctx, gold_payload);
        all_gold = all_gold && r.from_gold;
        results.push_back(std::move(r.result));
      } catch (const std::exception& e) {
        all_gold = false;
        trace.failures.push_back({Block::kResults, "backend_error", e.what(), std::nullopt, std::nullopt});
        if (a.plan == "booking")
          results.push_back({a.domain, BookingResult{a.domain}.render()});
        else
          results.push_back({a.domain, SearchResult{}.render()});
      }
    }
    store(Block::kResults, render_payloads(results));
    return all_gold ? Provenance::kGold : Provenance::kBackend;
  };

  struct Checked {
    bool ok = true;
    bool replace = false;
    std::optional<std::string> rendered, computed;
  };
  auto check = [&](Block b, const std::optional<std::string>& value) {
    Checked c;
    c.computed = b == Block::kAllEntities ? computed_all_entities() : computed_all_domains();
    c.rendered = value;
    bool parsed = true;
    try {
      TurnRecord probe;
      set_block(probe, b, value);
      c.rendered = get_block(probe, b);
    } catch (const WireFormatError&) {
      parsed = false;
    }
    c.ok = parsed && c.rendered == c.computed;
    c.replace = !c.ok && (config_.mismatch == MismatchPolicy::kReplaceWithComputed || !parsed);
    return c;
  };
  // Generated all_domains awaiting the domains block; unset when not generated.
  std::optional<std::optional<std::string>> pending_domains;
  auto settle_all_domains = [&]() {
    const Block b = Block::kAllDomains;
    if (variant_excludes(variant, b)) {
      store(b, computed_all_domains());
      return;
    }
    if (!pending_domains) return;
    Checked c = check(b, *pending_domains);
    pending_domains.reset();
    if (c.ok) return;
    trace.failures.push_back({b, "all_domains_mismatch", "generated value differs from the accumulated state",
                              c.rendered, c.computed});
    if (!c.replace) return;
    store(b, c.computed);
    auto& blocks = trace.blocks;
    blocks.erase(std::remove_if(blocks.begin(), blocks.end(), [&](const BlockTrace& x) { return x.block == b; }),
                 blocks.end());
    trace.skipped.erase(std::remove(trace.skipped.begin(), trace.skipped.end(), b), trace.skipped.end());
    if (c.computed) {
      auto pos = std::find_if(blocks.begin(), blocks.end(), [&](const BlockTrace& x) { return x.block > b; });
      blocks.insert(pos, BlockTrace{b, *c.computed, Provenance::kGenerated, {}});
    }
    current.clear();
    for (const auto& x : blocks) current += std::string(block_key(x.block)) + ": " + x.value + "\n";
  };

  auto t0 = Clock::now();
  Block at = Block::kUsr;
  try {
    rec.user_utterance = one_line(in.utterance);
    if (rec.user_utterance.empty()) throw std::invalid_argument("empty user utterance");
    emit(Block::kUsr, gold ? Provenance::kGold : Provenance::kGenerated);
    // The utterance is the user's input, not a model output.
    trace.blocks.back().provenance = Provenance::kGold;

    for (Block b : all_blocks()) {
      if (b == Block::kUsr) continue;
      at = b;
      if (b == Block::kDlgActs) {
        trace.stage1_ms = ms_since(t0);
        t0 = Clock::now();
      }
      // all_domains precedes domains, so its accumulation is settled here.
      if (b == Block::kSlotsSearch) settle_all_domains();
      const bool excluded = variant_excludes(variant, b);
      if (excluded) {
        if (b == Block::kAllEntities) store(b, computed_all_entities());
        continue;
      }

      if (preset.active && b < preset.until) {
        auto it = preset.blocks.find(b);
        if (it == preset.blocks.end()) {
          store(b, b == Block::kSys ? std::optional<std::string>("") : std::nullopt);
          if (std::find(preset.skipped.begin(), preset.skipped.end(), b) != preset.skipped.end())
            trace.skipped.push_back(b);
        } else {
          store(b, it->second.value);
          trace.blocks.push_back(it->second);
          current += std::string(block_key(b)) + ": " + it->second.value + "\n";
        }
        if (b == Block::kResults) {
          out.ledger = snap.ledger_after_backend;
          out.refs = snap.refs_after_backend;
          trace.backend_ms = 0;
          t0 = Clock::now();
        }
        continue;
      }

      if (auto ov = overrides.find(b); ov != overrides.end()) {
        if (ov->second.empty()) {
          store(b, b == Block::kSys ? std::optional<std::string>("") : std::nullopt);
          trace.skipped.push_back(b);
        } else {
          store(b, ov->second);
          emit(b, Provenance::kOverridden);
        }
        verify(b);
        if (b == Block::kResults) t0 = Clock::now();
        continue;
      }

      if (b == Block::kResults) {
        if (from_gold(in.mode, b)) {
          store(b, get_block(*gold, b));
          emit(b, Provenance::kGold);
        } else {
          auto tb = Clock::now();
          Provenance p = backend();
          trace.backend_ms = ms_since(tb);
          emit(b, p);
        }
        t0 = Clock::now();
        continue;
      }

      if (from_gold(in.mode, b)) {
        store(b, get_block(*gold, b));
        emit(b, Provenance::kGold);
        continue;
      }

      if (b == Block::kSys && config_.response == ResponsePolicy::kLexicalize) {
        Lexicalized lx = lexicalize(rec.delex.value_or(""), rec.dlg_acts.value_or(std::vector<DialogueAct>{}),
                                    rec.results.value_or(std::vector<DomainPayload>{}), rec, ontology_);
        store(b, lx.text);
        emit(b, Provenance::kGenerated);
        continue;
      }

      std::vector<SlotDistribution> dist;
      std::optional<std::string> value;
      if (config_.grounded_slots && (b == Block::kSlotsSearch || b == Block::kSlotsBooking))
        value = grounded_maps(b, dist);
      else
        value = generate(b);
      if (!value) trace.skipped.push_back(b);

      if (b == Block::kAllEntities) {
        Checked c = check(b, value);
        if (!c.ok) {
          trace.failures.push_back({b, "all_entities_mismatch", "generated value differs from the accumulated state",
                                    c.rendered, c.computed});
          if (c.replace) {
            value = c.computed;
            if (!trace.skipped.empty() && trace.skipped.back() == b) trace.skipped.pop_back();
          }
        }
      }
      if (b == Block::kAllDomains) {
        pending_domains = value;
        try {
          store(b, value);
        } catch (const TurnAbort&) {
          store(b, std::nullopt);
        }
        emit(b, Provenance::kGenerated);
        continue;
      }
      if (b == Block::kSys) {
        std::string text = value.value_or("");
        if (trim(text).empty() && config_.response == ResponsePolicy::kFallback) {
          text = lexicalize(rec.delex.value_or(""), rec.dlg_acts.value_or(std::vector<DialogueAct>{}),
                            rec.results.value_or(std::vector<DomainPayload>{}), rec, ontology_)
                     .text;
        }
        value = text;
      }
      store(b, value);
      emit(b, Provenance::kGenerated, std::move(dist));
      verify(b);
    }
    trace.stage2_ms = ms_since(t0);

    if (rec.delex) {
      Lexicalized lx = lexicalize(*rec.delex, rec.dlg_acts.value_or(std::vector<DialogueAct>{}),
                                  rec.results.value_or(std::vector<DomainPayload>{}), rec, ontology_);
      trace.lexicalized = lx.text;
      trace.unresolved = lx.unresolved;
      trace.template_divergence = diverges_from_template(*rec.delex, rec.system_response);
    }
  } catch (const GeneratorError& e) {
    trace.error = std::string(block_key(at)) + ": " + e.what();
    trace.generator_error = e.kind();
  } catch (const TurnAbort& e) {
    trace.error = e.what();
  }
  snap.ledger_after_backend = out.ledger;
  snap.refs_after_backend = out.refs;
  return out;
}

void Session::commit(Outcome& out, TurnInput in, Snapshot snap) {
  memory_ = out.full;
  ledger_ = out.ledger;
  refs_ = out.refs;
  prompt_history_ = snap.prompt_history + serialize_turn(out.trace.record(), config_.variant);
  history_.push_back(out.trace);
  inputs_.push_back(std::move(in));
  snapshots_.push_back(std::move(snap));
}

TurnTrace Session::step(const std::string& utterance, Mode mode, const Overrides& overrides,
                        const TurnRecord* gold) {
  check_overrides(overrides);
  for (const auto& [b, v] : overrides)
    if (variant_excludes(config_.variant, b))
      throw OverrideError(std::string(block_key(b)) + " is not part of the " + std::string(to_string(config_.variant)) +
                          " format");
  TurnInput in{utterance, mode, gold ? std::optional<TurnRecord>(*gold) : std::nullopt};
  Snapshot snap{memory_, ledger_, refs_, prompt_history_, {}, ReferenceGenerator{0}};
  Outcome out = run_turn(history_.size(), in, overrides, Preset{}, snap);
  if (!out.trace.error) commit(out, std::move(in), std::move(snap));
  return out.trace;
}

TurnTrace Session::rerun(size_t t, const Overrides& overrides) {
  if (t >= history_.size()) throw std::out_of_range("no turn " + std::to_string(t));
  check_overrides(overrides);
  for (const auto& [b, v] : overrides)
    if (variant_excludes(config_.variant, b))
      throw OverrideError(std::string(block_key(b)) + " is not part of the " + std::string(to_string(config_.variant)) +
                          " format");
  Preset preset;
  if (!overrides.empty()) {
    preset.active = true;
    preset.until = overrides.begin()->first;
    for (const auto& bt : history_[t].blocks)
      if (bt.block < preset.until) preset.blocks[bt.block] = bt;
    for (Block b : history_[t].skipped)
      if (b < preset.until) preset.skipped.push_back(b);
  }
  TurnInput in = inputs_[t];
  Snapshot snap = snapshots_[t];
  Outcome out = run_turn(t, in, overrides, preset, snap);
  if (out.trace.error) return out.trace;
  history_.resize(t);
  inputs_.resize(t);
  snapshots_.resize(t);
  commit(out, std::move(in), std::move(snap));
  return out.trace;
}

std::vector<TurnTrace> replay(const ConversationRecord& gold, Mode mode, std::shared_ptr<Generator> generator,
                              const Database& db, const Ontology& ontology, const FlowConfig& config) {
  Session session(std::move(generator), db, ontology, config);
  std::vector<TurnTrace> traces;
  for (const auto& turn : gold.turns) {
    traces.push_back(session.step(turn.user_utterance, mode, {}, &turn));
    if (traces.back().error) break;
  }
  return traces;
}

}  // namespace todflow
