#include "todflow/service.h"

#include <chrono>
#include <cstdio>
#include <ctime>

#include "httplib.h"
#include "todflow/pipeline.h"

namespace todflow {

namespace {

using nlohmann::json;

void send(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void fail(httplib::Response& res, int status, const std::string& category, const std::string& message,
          const json& extra = nullptr) {
  json body{{"error", {{"category", category}, {"message", message}}}};
  if (!extra.is_null()) body["trace"] = extra;
  send(res, status, body);
}

std::string now_utc() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::optional<json> body_json(const httplib::Request& req, httplib::Response& res) {
  if (req.body.empty()) return json::object();
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) {
      fail(res, 400, "bad_request", "body must be a JSON object");
      return std::nullopt;
    }
    return j;
  } catch (const json::exception& e) {
    fail(res, 400, "bad_request", e.what());
    return std::nullopt;
  }
}

json record_json(const EntityRecord& r) {
  json o = json::object();
  for (const auto& [k, v] : r.attributes) o[k] = v;
  return o;
}

// Turn result -> HTTP status.
void send_trace(httplib::Response& res, const TurnTrace& trace, Variant variant) {
  json body = trace_to_json(trace, variant);
  if (!trace.error) return send(res, 200, body);
  if (trace.generator_error)
    return fail(res, 502, "generator_unavailable", *trace.error, body);
  fail(res, 502, "generator_output_invalid", *trace.error, body);
}

}  // namespace

Service::Service(ServiceConfig config)
    : config_(std::move(config)),
      ontology_(load_ontology_file(config_.ontology)),
      db_(Database::load_dir(config_.db)) {
  if (config_.processed) {
    ProcessedData data = load_processed(*config_.processed);
    for (const auto& split : kSplits) {
      auto it = data.splits.find(split);
      if (it == data.splits.end()) continue;
      gold_.insert(gold_.end(), it->second.conversations.begin(), it->second.conversations.end());
    }
  }
}

Service::Service(ServiceConfig config, Ontology ontology, Database db, std::vector<ConversationRecord> gold)
    : config_(std::move(config)), ontology_(std::move(ontology)), db_(std::move(db)), gold_(std::move(gold)) {}

json Service::descriptor(const Entry& e) const {
  return {{"id", e.id},
          {"created_at", e.created_at},
          {"mode", to_string(e.mode)},
          {"variant", to_string(e.variant)},
          {"generator", e.generator},
          {"seed", e.seed},
          {"turns", e.session->history().size()}};
}

std::shared_ptr<Service::Entry> Service::find(const std::string& id) const {
  std::shared_lock lock(sessions_mu_);
  auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::shared_ptr<Generator> Service::generator_for(const std::string& spec_text, Variant variant) {
  GeneratorSpec spec = parse_generator_spec(spec_text);
  if (spec.kind == GeneratorSpec::Kind::kPlayback && gold_.empty())
    throw ConfigError("playback needs a processed corpus in the service config");
  std::string key = spec.text() + "|" + std::string(to_string(variant));
  std::lock_guard lock(generators_mu_);
  auto& slot = generators_[key];
  if (!slot) slot = make_generator(spec, variant, gold_, config_.remote);
  return slot;
}

const TurnRecord* Service::gold_turn(const std::vector<std::string>& utterances) const {
  for (const auto& c : gold_) {
    if (c.turns.size() < utterances.size()) continue;
    bool ok = true;
    for (size_t i = 0; i < utterances.size() && ok; ++i) ok = c.turns[i].user_utterance == utterances[i];
    if (ok) return &c.turns[utterances.size() - 1];
  }
  return nullptr;
}

void Service::mount(httplib::Server& server) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) { send(res, 200, {{"status", "ok"}}); });

  server.Post("/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    auto body = body_json(req, res);
    if (!body) return;
    auto e = std::make_shared<Entry>();
    try {
      FlowConfig fc = config_.flow;
      if (body->contains("mode")) fc.mode = parse_mode((*body)["mode"].get<std::string>());
      if (body->contains("variant")) fc.variant = parse_variant((*body)["variant"].get<std::string>());
      if (body->contains("seed")) fc.seed = (*body)["seed"].get<std::uint64_t>();
      if (body->contains("k")) fc.k = (*body)["k"].get<size_t>();
      e->generator = body->value("generator", config_.generator);
      e->mode = fc.mode;
      e->variant = fc.variant;
      e->seed = fc.seed;
      e->created_at = now_utc();
      e->session = std::make_unique<Session>(generator_for(e->generator, fc.variant), db_, ontology_, fc);
    } catch (const json::exception& ex) {
      return fail(res, 422, "invalid_session", ex.what());
    } catch (const std::exception& ex) {
      return fail(res, 422, "invalid_session", ex.what());
    }
    {
      std::unique_lock lock(sessions_mu_);
      if (sessions_.size() >= config_.max_sessions) return fail(res, 429, "too_many_sessions", "session limit reached");
      char buf[32];
      std::snprintf(buf, sizeof buf, "s%06zu", next_id_++);
      e->id = buf;
      sessions_[e->id] = e;
    }
    send(res, 201, descriptor(*e));
  });

  server.Get("/v1/sessions", [this](const httplib::Request&, httplib::Response& res) {
    std::vector<std::shared_ptr<Entry>> all;
    {
      std::shared_lock lock(sessions_mu_);
      for (const auto& [id, e] : sessions_) all.push_back(e);
    }
    json out = json::array();
    for (const auto& e : all) {
      std::lock_guard lock(e->mu);
      out.push_back(descriptor(*e));
    }
    send(res, 200, {{"sessions", out}});
  });

  server.Get(R"(/v1/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    auto e = find(req.matches[1]);
    if (!e) return fail(res, 404, "unknown_session", "no session " + std::string(req.matches[1]));
    std::lock_guard lock(e->mu);
    json traces = json::array();
    for (const auto& t : e->session->history()) traces.push_back(trace_to_json(t, e->variant));
    send(res, 200, {{"session", descriptor(*e)}, {"traces", traces}});
  });

  server.Post(R"(/v1/sessions/([^/]+)/turns)", [this](const httplib::Request& req, httplib::Response& res) {
    auto e = find(req.matches[1]);
    if (!e) return fail(res, 404, "unknown_session", "no session " + std::string(req.matches[1]));
    std::unique_lock lock(e->mu, std::try_to_lock);
    if (!lock.owns_lock()) return fail(res, 409, "turn_in_progress", "a turn is already running on this session");
    auto body = body_json(req, res);
    if (!body) return;
    if (!body->contains("utterance") || !(*body)["utterance"].is_string())
      return fail(res, 422, "invalid_turn", "utterance must be a string");
    std::string utterance = (*body)["utterance"].get<std::string>();
    if (utterance.find_first_not_of(" \t\r\n") == std::string::npos)
      return fail(res, 422, "invalid_turn", "utterance is empty");
    try {
      Overrides ov = parse_overrides(body->contains("overrides") ? (*body)["overrides"] : json(nullptr));
      auto utterances = e->utterances;
      utterances.push_back(utterance);
      const TurnRecord* gold = gold_turn(utterances);
      if (e->mode != Mode::kEndToEnd && !gold)
        return fail(res, 422, "gold_unavailable", "context modes need a gold dialogue matching the session");
      TurnTrace trace = e->session->step(utterance, e->mode, ov, gold);
      if (!trace.error) e->utterances = std::move(utterances);
      send_trace(res, trace, e->variant);
    } catch (const OverrideError& ex) {
      fail(res, 422, "invalid_override", ex.what());
    } catch (const std::invalid_argument& ex) {
      fail(res, 422, "invalid_turn", ex.what());
    }
  });

  server.Post(R"(/v1/sessions/([^/]+)/turns/(\d+)/rerun)", [this](const httplib::Request& req, httplib::Response& res) {
    auto e = find(req.matches[1]);
    if (!e) return fail(res, 404, "unknown_session", "no session " + std::string(req.matches[1]));
    std::unique_lock lock(e->mu, std::try_to_lock);
    if (!lock.owns_lock()) return fail(res, 409, "turn_in_progress", "a turn is already running on this session");
    size_t t = std::stoul(req.matches[2]);
    if (t >= e->session->history().size()) return fail(res, 404, "unknown_turn", "no turn " + std::to_string(t));
    auto body = body_json(req, res);
    if (!body) return;
    try {
      Overrides ov = parse_overrides(body->contains("overrides") ? (*body)["overrides"] : json(nullptr));
      TurnTrace trace = e->session->rerun(t, ov);
      if (!trace.error) e->utterances.resize(t + 1);
      send_trace(res, trace, e->variant);
    } catch (const OverrideError& ex) {
      fail(res, 422, "invalid_override", ex.what());
    } catch (const std::invalid_argument& ex) {
      fail(res, 422, "invalid_turn", ex.what());
    }
  });

  server.Get("/v1/ontology", [this](const httplib::Request&, httplib::Response& res) {
    res.status = 200;
    res.set_content(ontology_to_json(ontology_).dump(), "application/json");
  });

  server.Get(R"(/v1/db/([^/]+)/search)", [this](const httplib::Request& req, httplib::Response& res) {
    std::string domain = req.matches[1];
    if (!db_.has_domain(domain)) return fail(res, 404, "unknown_domain", "no database for " + domain);
    SlotMap slots{domain, {}};
    size_t k = config_.flow.k;
    for (const auto& [key, value] : req.params) {
      if (key == "k") {
        try {
          k = std::stoul(value);
        } catch (const std::exception&) {
          return fail(res, 422, "invalid_query", "k must be a non-negative integer");
        }
        continue;
      }
      if (!ontology_.find_slot(domain, key)) return fail(res, 422, "invalid_query", "unknown slot " + domain + "." + key);
      slots.pairs.push_back({key, value});
    }
    try {
      SearchResult r = db_.search(constraints_from_slots(ontology_, slots), k);
      json sample = json::array();
      for (const auto& rec : r.sample) sample.push_back(record_json(rec));
      send(res, 200, {{"domain", domain}, {"choice", r.choice}, {"sample", sample}});
    } catch (const DbError& ex) {
      fail(res, 422, "invalid_query", ex.what());
    }
  });
}

}  // namespace todflow
