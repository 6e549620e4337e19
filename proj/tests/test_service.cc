#include <atomic>
#include <condition_variable>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "support.h"
#include "todflow/config.h"
#include "todflow/service.h"

using namespace todflow;
using nlohmann::json;

namespace {

const std::vector<ConversationRecord>& gold() { return fixtures::processed().splits.at("test").conversations; }

// A Service mounted on an ephemeral port.
struct Running {
  Service service;
  httplib::Server server;
  std::thread thread;
  int port = 0;

  explicit Running(ServiceConfig c = {})
      : service(std::move(c), fixtures::ontology(), fixtures::db(), gold()) {
    service.mount(server);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~Running() {
    server.stop();
    thread.join();
  }

  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(10, 0);
    return c;
  }
  std::pair<int, json> post(const std::string& path, const json& body) const {
    auto r = client().Post(path, body.dump(), "application/json");
    REQUIRE(r);
    return {r->status, json::parse(r->body)};
  }
  std::pair<int, json> get(const std::string& path) const {
    auto r = client().Get(path);
    REQUIRE(r);
    return {r->status, json::parse(r->body)};
  }
  std::string session(const json& body) const {
    auto [status, j] = post("/v1/sessions", body);
    REQUIRE(status == 201);
    return j["id"].get<std::string>();
  }
};

const ConversationRecord& conversation(const std::string& id) {
  for (const auto& c : gold())
    if (c.id == id) return c;
  throw std::runtime_error("missing " + id);
}

std::string block_value(const json& trace, const std::string& key) {
  for (const auto& b : trace["blocks"])
    if (b["key"] == key) return b["value"].get<std::string>();
  return "<absent>";
}

std::string block_provenance(const json& trace, const std::string& key) {
  for (const auto& b : trace["blocks"])
    if (b["key"] == key) return b["provenance"].get<std::string>();
  return "<absent>";
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("service config resolves paths against its directory") {
    json j = json::parse(R"({
      "ontology": "ontology.json", "db": "/data/db", "processed": "../out",
      "generator": "scripted:rules.json", "port": 9000, "max_sessions": 3,
      "defaults": {"mode": "ctx-result", "variant": "MIN", "k": 3, "seed": 11},
      "decoding": {"strategy": "top_p", "p": 0.9, "temperature": 0.7},
      "remote": {"timeout_ms": 500, "max_retries": 1},
      "policies": {"verification_mismatch": "keep-generated", "response": "lexicalize", "grounded_slots": true}})");
    ServiceConfig c = ServiceConfig::from_json(j, "/etc/todflow");
    CHECK(c.ontology == "/etc/todflow/ontology.json");
    CHECK(c.db == "/data/db");
    CHECK(*c.processed == "/etc/out");
    CHECK(c.port == 9000);
    CHECK(c.max_sessions == 3);
    CHECK(c.flow.mode == Mode::kContextResult);
    CHECK(c.flow.variant == Variant::kMin);
    CHECK(c.flow.k == 3);
    CHECK(c.flow.seed == 11);
    CHECK(c.flow.decoding.temperature == 0.7);
    CHECK(c.remote.max_retries == 1);
    CHECK(c.flow.mismatch == MismatchPolicy::kKeepGenerated);
    CHECK(c.flow.response == ResponsePolicy::kLexicalize);
    CHECK(c.flow.grounded_slots);
  }

  TEST_CASE("bad configs are rejected") {
    CHECK_THROWS_AS(ServiceConfig::from_json(json::parse(R"({"db": "x"})"), "."), ConfigError);
    CHECK_THROWS_AS(ServiceConfig::from_json(json::parse(R"({"ontology": "o", "db": "d", "generator": "gpt"})"), "."),
                    ConfigError);
    CHECK_THROWS_AS(
        ServiceConfig::from_json(json::parse(R"({"ontology": "o", "db": "d", "policies": {"response": "loud"}})"), "."),
        ConfigError);
    CHECK_THROWS_AS(ServiceConfig::from_json(json::parse(R"({"ontology": 3, "db": "d"})"), "."), ConfigError);
    CHECK_THROWS_AS(
        ServiceConfig::from_json(json::parse(R"({"ontology": "o", "db": "d", "decoding": {"temperature": 0}})"), "."),
        ConfigError);
    CHECK_THROWS_AS(load_service_config("/nonexistent/todflow.json"), ConfigError);
  }

  TEST_CASE("shipped config loads") {
    ServiceConfig c = load_service_config(fixtures::source_dir() / "config" / "todflow.json");
    CHECK(c.ontology == fixtures::ontology_path().lexically_normal());
    CHECK(c.generator == "playback");
    CHECK(c.flow.decoding.max_new_tokens == 512);
  }

  TEST_CASE("environment overrides the default config path") {
    unsetenv("TODFLOW_CONFIG");
    CHECK(default_config_path() == "config/todflow.json");
    setenv("TODFLOW_CONFIG", "/tmp/other.json", 1);
    CHECK(default_config_path() == "/tmp/other.json");
    unsetenv("TODFLOW_CONFIG");
  }

  TEST_CASE("generator specs") {
    CHECK(parse_generator_spec("playback").kind == GeneratorSpec::Kind::kPlayback);
    auto s = parse_generator_spec("scripted:/tmp/x.json");
    CHECK(s.kind == GeneratorSpec::Kind::kScripted);
    CHECK(s.arg == "/tmp/x.json");
    CHECK(parse_generator_spec("remote:http://h:1").text() == "remote:http://h:1");
    CHECK_THROWS_AS(parse_generator_spec("remote:"), ConfigError);
    CHECK_THROWS_AS(parse_generator_spec("beam"), ConfigError);
    CHECK_THROWS_AS(make_generator(parse_generator_spec("scripted:/nonexistent.json"), Variant::kFull, {}, {}),
                    ConfigError);
    CHECK(parse_mismatch_policy("replace-with-computed") == MismatchPolicy::kReplaceWithComputed);
    CHECK_THROWS_AS(parse_mismatch_policy("ignore"), ConfigError);
  }
}

TEST_SUITE("service") {
  TEST_CASE("health and grounding data") {
    Running r;
    CHECK(r.get("/v1/health").second["status"] == "ok");
    auto [status, onto] = r.get("/v1/ontology");
    CHECK(status == 200);
    CHECK(ontology_from_json(onto) == fixtures::ontology());

    auto [s1, found] = r.get("/v1/db/attraction/search?area=centre&k=2");
    CHECK(s1 == 200);
    CHECK(found["choice"] == 44);
    CHECK(found["sample"].size() == 2);
    auto [s2, park] = r.get("/v1/db/attraction/search?area=centre&type=park");
    CHECK(park["choice"] == 1);
    CHECK(park["sample"][0]["name"] == "cambridge university botanic gardens");
    CHECK(r.get("/v1/db/police/search").first == 404);
    CHECK(r.get("/v1/db/hotel/search?colour=red").first == 422);
    CHECK(r.get("/v1/db/hotel/search?k=many").first == 422);
  }

  TEST_CASE("opening exchange in a playback session") {
    Running r;
    auto [status, desc] = r.post("/v1/sessions", {{"mode", "END_TO_END"}, {"variant", "MIN"}, {"generator", "playback"}});
    REQUIRE(status == 201);
    CHECK(desc["mode"] == "END_TO_END");
    CHECK(desc["variant"] == "MIN");
    CHECK(desc["turns"] == 0);
    std::string id = desc["id"];
    auto [ts, trace] = r.post("/v1/sessions/" + id + "/turns",
                              {{"utterance", "I am looking for places to go in the centre of town."}});
    REQUIRE(ts == 200);
    CHECK(trace["response"] == "I have 44 matches for central area, I can narrow it down by type or entrance prices.");
    CHECK(block_value(trace, "slots_search") == "domain:attraction, area:centre, name:?, type:?");
    CHECK(block_value(trace, "all_entities") == "<absent>");
    CHECK(block_provenance(trace, "results") == "backend");
    CHECK(parse_turn(trace["wire"].get<std::string>()) == apply_variant(conversation("MUL0002").turns[0], Variant::kMin));

    auto [gs, listing] = r.get("/v1/sessions/" + id);
    CHECK(gs == 200);
    CHECK(listing["session"]["turns"] == 1);
    REQUIRE(listing["traces"].size() == 1);
    CHECK(listing["traces"][0]["wire"] == trace["wire"]);
    CHECK(r.get("/v1/sessions").second["sessions"].size() == 1);
  }

  TEST_CASE("rerun with an overridden area recomputes the search") {
    Running r;
    std::string id = r.session({{"mode", "e2e"}});
    const auto& g = conversation("MUL0002");
    for (size_t t = 0; t < 2; ++t)
      REQUIRE(r.post("/v1/sessions/" + id + "/turns", {{"utterance", g.turns[t].user_utterance}}).first == 200);
    std::string north = "domain:attraction, area:north, name:?, type:?";
    auto [status, trace] =
        r.post("/v1/sessions/" + id + "/turns/0/rerun", {{"overrides", {{"slots_search", north}}}});
    REQUIRE(status == 200);
    CHECK(block_value(trace, "slots_search") == north);
    CHECK(block_provenance(trace, "slots_search") == "overridden");
    SearchResult want = fixtures::db().search({"attraction", {{"area", "north"}}}, 5);
    CHECK(block_value(trace, "results").rfind("domain:attraction, ['Choice', " + std::to_string(want.choice) + "]", 0) ==
          0);
    CHECK(r.get("/v1/sessions/" + id).second["session"]["turns"] == 1);
    CHECK(r.post("/v1/sessions/" + id + "/turns/4/rerun", json::object()).first == 404);
    // The session continues from the rerun turn.
    CHECK(r.post("/v1/sessions/" + id + "/turns", {{"utterance", g.turns[1].user_utterance}}).first == 200);
  }

  TEST_CASE("request errors") {
    Running r;
    CHECK(r.post("/v1/sessions/s999999/turns", {{"utterance", "hello"}}).first == 404);
    CHECK(r.get("/v1/sessions/s999999").first == 404);
    CHECK(r.post("/v1/sessions", {{"mode", "oracle"}}).first == 422);
    CHECK(r.post("/v1/sessions", {{"generator", "beam"}}).first == 422);
    CHECK(r.post("/v1/sessions", {{"seed", "seven"}}).first == 422);
    std::string id = r.session(json::object());
    auto [s1, e1] = r.post("/v1/sessions/" + id + "/turns", {{"utterance", "hi"}, {"overrides", {{"usr", "x"}}}});
    CHECK(s1 == 422);
    CHECK(e1["error"]["category"] == "invalid_override");
    CHECK(r.post("/v1/sessions/" + id + "/turns", {{"utterance", "  "}}).first == 422);
    CHECK(r.post("/v1/sessions/" + id + "/turns", {{"text", "hi"}}).first == 422);
    auto bad = r.client().Post("/v1/sessions/" + id + "/turns", "{not json", "application/json");
    REQUIRE(bad);
    CHECK(bad->status == 400);

    std::string ctx = r.session({{"mode", "CONTEXT_RESULT"}});
    auto [s2, e2] = r.post("/v1/sessions/" + ctx + "/turns", {{"utterance", "something nobody said"}});
    CHECK(s2 == 422);
    CHECK(e2["error"]["category"] == "gold_unavailable");
  }

  TEST_CASE("session limit") {
    ServiceConfig c;
    c.max_sessions = 1;
    Running r(c);
    r.session(json::object());
    auto [status, err] = r.post("/v1/sessions", json::object());
    CHECK(status == 429);
    CHECK(err["error"]["category"] == "too_many_sessions");
  }

  TEST_CASE("unreachable model gives 502 and leaves the session unchanged") {
    ServiceConfig c;
    c.remote.max_retries = 0;
    c.remote.timeout_ms = 500;
    Running r(c);
    std::string id = r.session({{"generator", "remote:http://127.0.0.1:1"}});
    auto [status, err] = r.post("/v1/sessions/" + id + "/turns", {{"utterance", "hello"}});
    CHECK(status == 502);
    CHECK(err["error"]["category"] == "generator_unavailable");
    CHECK(err["trace"]["error"].is_string());
    CHECK(r.get("/v1/sessions/" + id).second["session"]["turns"] == 0);
  }

  TEST_CASE("a second turn on a busy session is refused") {
    httplib::Server model;
    std::mutex mu;
    std::condition_variable cv;
    bool release = false;
    std::atomic<int> calls{0};
    model.Post("/v1/complete", [&](const httplib::Request&, httplib::Response& res) {
      if (calls++ == 0) {
        std::unique_lock lock(mu);
        cv.wait_for(lock, std::chrono::seconds(5), [&] { return release; });
      }
      res.set_content(R"({"text": "<skip>"})", "application/json");
    });
    int mport = model.bind_to_any_port("127.0.0.1");
    std::thread mthread([&] { model.listen_after_bind(); });
    model.wait_until_ready();

    Running r;
    std::string id = r.session({{"generator", "remote:http://127.0.0.1:" + std::to_string(mport)}});
    std::string other = r.session(json::object());
    std::atomic<int> first_status{0};
    std::thread first([&] { first_status = r.post("/v1/sessions/" + id + "/turns", {{"utterance", "hello"}}).first; });
    while (calls.load() == 0) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    auto [busy, err] = r.post("/v1/sessions/" + id + "/turns", {{"utterance", "hello again"}});
    CHECK(busy == 409);
    CHECK(err["error"]["category"] == "turn_in_progress");
    // Other sessions are not blocked.
    CHECK(r.post("/v1/sessions/" + other + "/turns",
                 {{"utterance", "I am looking for places to go in the centre of town."}})
              .first == 200);
    {
      std::lock_guard lock(mu);
      release = true;
    }
    cv.notify_all();
    first.join();
    CHECK(first_status != 409);
    model.stop();
    mthread.join();
  }
}
