#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "httplib.h"
#include "todflow/config.h"
#include "todflow/evaluation.h"
#include "todflow/pipeline.h"
#include "todflow/service.h"

using namespace todflow;
namespace fs = std::filesystem;

namespace {

struct Resources {
  std::string config;
  std::string db;
  std::string ontology;

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--config", config, "service config file (default $TODFLOW_CONFIG or config/todflow.json)");
    cmd->add_option("--db", db, "database directory");
    cmd->add_option("--ontology", ontology, "ontology file");
  }

  std::pair<Ontology, Database> load() const {
    fs::path db_dir = db, onto = ontology;
    if (db_dir.empty() || onto.empty()) {
      ServiceConfig sc = load_service_config(config.empty() ? default_config_path() : fs::path(config));
      if (db_dir.empty()) db_dir = sc.db;
      if (onto.empty()) onto = sc.ontology;
    }
    return {load_ontology_file(onto), Database::load_dir(db_dir)};
  }
};

const ProcessedSplit& split_of(const ProcessedData& data, const std::string& name) {
  auto it = data.splits.find(name);
  if (it == data.splits.end()) throw std::invalid_argument("processed data has no split '" + name + "'");
  return it->second;
}

int run_prepare(const std::string& corpus, const std::string& db_dir, const std::string& onto,
                const std::string& pipeline, const std::string& variant, size_t k, std::uint64_t seed,
                size_t max_len, const std::string& out) {
  Ontology o = load_ontology_file(onto);
  Database db = Database::load_dir(db_dir);
  PipelineConfig cfg;
  if (!pipeline.empty()) load_pipeline_settings(pipeline, cfg);
  cfg.variant = parse_variant(variant);
  cfg.k = k;
  cfg.seed = seed;
  cfg.max_sequence_length = max_len;
  cfg.lexicon.places = db.place_names();
  cfg.validate();
  auto r = prepare_data(corpus, db, o, cfg, out);
  std::cout << r.dialogues.size() << " dialogues, " << r.issues.size() << " issues\n";
  return 0;
}

struct EvalArgs {
  std::string processed, mode = "e2e", generator = "playback", variant, split = "test", out;
  size_t k = 0;
  std::uint64_t seed = 0;
  std::string mismatch = "replace-with-computed", response = "generate";
};

int run_eval(const EvalArgs& a, const Resources& res) {
  ProcessedData data = load_processed(a.processed);
  const ProcessedSplit& split = split_of(data, a.split);
  auto [ontology, db] = res.load();
  FlowConfig fc;
  fc.variant = a.variant.empty() ? data.variant : parse_variant(a.variant);
  fc.k = a.k ? a.k : data.k;
  fc.seed = a.seed;
  fc.mismatch = parse_mismatch_policy(a.mismatch);
  fc.response = parse_response_policy(a.response);
  Mode mode = parse_mode(a.mode);
  auto gen = make_generator(parse_generator_spec(a.generator), fc.variant, split.conversations, RemoteConfig{});
  EvalReport rep = evaluate(split.conversations, split.goals, mode, gen, db, ontology, fc);
  std::string text = rep.to_json().dump(2) + "\n";
  if (!a.out.empty()) {
    std::ofstream f(a.out, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + a.out);
    f << text;
  }
  std::cout << EvalReport::table_header() << "\n" << rep.table_row() << "\n";
  return 0;
}

struct ReplayArgs {
  std::string processed, conversation, mode = "e2e", generator = "playback", variant;
  std::uint64_t seed = 0;
};

int run_replay(const ReplayArgs& a, const Resources& res) {
  ProcessedData data = load_processed(a.processed);
  const ConversationRecord* conv = nullptr;
  std::vector<ConversationRecord> all;
  for (const auto& [name, split] : data.splits)
    all.insert(all.end(), split.conversations.begin(), split.conversations.end());
  std::string wanted = dialogue_key(a.conversation);
  for (const auto& c : all)
    if (c.id == wanted) conv = &c;
  if (!conv) throw std::invalid_argument("no conversation '" + a.conversation + "' in " + a.processed);
  auto [ontology, db] = res.load();
  FlowConfig fc;
  fc.variant = a.variant.empty() ? data.variant : parse_variant(a.variant);
  fc.k = data.k;
  fc.seed = a.seed;
  auto gen = make_generator(parse_generator_spec(a.generator), fc.variant, all, RemoteConfig{});
  auto traces = replay(*conv, parse_mode(a.mode), gen, db, ontology, fc);
  size_t differing = 0, compared = 0;
  for (size_t t = 0; t < traces.size(); ++t) {
    const TurnTrace& tr = traces[t];
    TurnRecord gold = apply_variant(conv->turns[t], fc.variant);
    TurnRecord got = tr.record();
    std::cout << "turn " << t << "\n";
    for (Block b : all_blocks()) {
      auto g = get_block(gold, b), h = get_block(got, b);
      if (!g && !h) continue;
      ++compared;
      const BlockTrace* bt = tr.find(b);
      std::string prov = bt ? std::string(to_string(bt->provenance)) : "absent";
      if (g == h) {
        std::cout << "  = " << block_key(b) << " [" << prov << "]\n";
        continue;
      }
      ++differing;
      std::cout << "  - " << block_key(b) << ": " << g.value_or("<absent>") << "\n";
      std::cout << "  + " << block_key(b) << ": " << h.value_or("<absent>") << " [" << prov << "]\n";
    }
    for (const auto& f : tr.failures) std::cout << "  ! " << block_key(f.block) << " " << f.kind << ": " << f.detail << "\n";
    if (tr.error) {
      std::cout << "  aborted: " << *tr.error << "\n";
      break;
    }
  }
  std::cout << conv->id << ": " << traces.size() << "/" << conv->turns.size() << " turns, " << compared
            << " blocks, " << differing << " differ\n";
  return 0;
}

int run_db_query(const std::string& domain, const std::vector<std::string>& where, size_t k, const Resources& res) {
  auto [ontology, db] = res.load();
  if (!db.has_domain(domain)) throw DbError("no database for domain '" + domain + "'");
  SlotMap slots{domain, {}};
  for (const auto& w : where) {
    auto eq = w.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--where expects slot=value, got '" + w + "'");
    std::string slot = w.substr(0, eq);
    if (!ontology.find_slot(domain, slot)) throw std::invalid_argument("unknown slot " + domain + "." + slot);
    slots.pairs.push_back({slot, w.substr(eq + 1)});
  }
  SearchResult r = db.search(constraints_from_slots(ontology, slots), k);
  std::cout << "choice: " << r.choice << "\n";
  for (const auto& rec : r.sample) {
    nlohmann::ordered_json o;
    for (const auto& [f, v] : rec.attributes) o[f] = v;
    std::cout << o.dump() << "\n";
  }
  return 0;
}

int run_serve(const std::string& config_path, int port) {
  ServiceConfig sc = load_service_config(config_path.empty() ? default_config_path() : fs::path(config_path));
  if (port > 0) sc.port = port;
  Service service(sc);
  httplib::Server server;
  service.mount(server);
  std::cout << "listening on " << sc.host << ":" << sc.port << std::endl;
  if (!server.listen(sc.host, sc.port)) throw std::runtime_error("cannot listen on port " + std::to_string(sc.port));
  return 0;
}

int report(const char* category, int code, const std::exception& e) {
  std::cerr << "error[" << category << "]: " << e.what() << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"todflow: task-oriented dialogue pipeline tools"};
  app.require_subcommand(1);

  auto* prep = app.add_subcommand("prepare-data", "convert a raw corpus into the processed format");
  std::string corpus, db_dir, onto, out, pipeline, variant = "FULL";
  size_t k = 5, max_len = 1024;
  std::uint64_t seed = 0;
  prep->add_option("--corpus", corpus)->required();
  prep->add_option("--db", db_dir)->required();
  prep->add_option("--ontology", onto)->required();
  prep->add_option("--pipeline", pipeline, "cue and placeholder settings");
  prep->add_option("--variant", variant)->check(CLI::IsMember({"FULL", "MED", "MIN"}));
  prep->add_option("--k", k);
  prep->add_option("--seed", seed);
  prep->add_option("--max-length", max_len, "training sequence limit in tokens");
  prep->add_option("--out", out)->required();

  auto* ev = app.add_subcommand("eval", "replay a processed split and score it");
  EvalArgs ea;
  Resources eval_res;
  ev->add_option("--processed", ea.processed)->required();
  ev->add_option("--mode", ea.mode)->check(CLI::IsMember({"e2e", "ctx-state", "ctx-result"}));
  ev->add_option("--generator", ea.generator);
  ev->add_option("--variant", ea.variant)->check(CLI::IsMember({"FULL", "MED", "MIN"}));
  ev->add_option("--k", ea.k);
  ev->add_option("--seed", ea.seed);
  ev->add_option("--split", ea.split);
  ev->add_option("--out", ea.out, "results file");
  ev->add_option("--mismatch-policy", ea.mismatch);
  ev->add_option("--response-policy", ea.response);
  eval_res.add_flags(ev);

  auto* serve = app.add_subcommand("serve", "run the HTTP service");
  std::string serve_config;
  int port = 0;
  serve->add_option("--port", port);
  serve->add_option("--config", serve_config);

  auto* rp = app.add_subcommand("replay", "replay one conversation and diff it against gold");
  ReplayArgs ra;
  Resources replay_res;
  rp->add_option("--conversation", ra.conversation)->required();
  rp->add_option("--processed", ra.processed)->required();
  rp->add_option("--mode", ra.mode)->check(CLI::IsMember({"e2e", "ctx-state", "ctx-result"}));
  rp->add_option("--generator", ra.generator);
  rp->add_option("--variant", ra.variant)->check(CLI::IsMember({"FULL", "MED", "MIN"}));
  rp->add_option("--seed", ra.seed);
  replay_res.add_flags(rp);

  auto* dq = app.add_subcommand("db-query", "search a domain database");
  std::string domain;
  std::vector<std::string> where;
  size_t qk = 5;
  Resources db_res;
  dq->add_option("--domain", domain)->required();
  dq->add_option("--where", where, "slot=value")->expected(0, -1);
  dq->add_option("--k", qk);
  db_res.add_flags(dq);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*prep) return run_prepare(corpus, db_dir, onto, pipeline, variant, k, seed, max_len, out);
    if (*ev) return run_eval(ea, eval_res);
    if (*serve) return run_serve(serve_config, port);
    if (*rp) return run_replay(ra, replay_res);
    if (*dq) return run_db_query(domain, where, qk, db_res);
  } catch (const ConfigError& e) {
    return report("config", 3, e);
  } catch (const OntologyError& e) {
    return report("ontology", 3, e);
  } catch (const WireFormatError& e) {
    return report("wire_format", 4, e);
  } catch (const DbError& e) {
    return report("db", 5, e);
  } catch (const GeneratorError& e) {
    return report("generator", 6, e);
  } catch (const EvaluationError& e) {
    return report("evaluation", 7, e);
  } catch (const std::invalid_argument& e) {
    return report("usage", 2, e);
  } catch (const std::exception& e) {
    return report("runtime", 1, e);
  }
  return 0;
}
