#include <atomic>
#include <cmath>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "support.h"
#include "todflow/generator.h"
#include "todflow/sampler.h"

using namespace todflow;

namespace {

DecodingConfig cfg(Strategy s, double t = 1.0) {
  DecodingConfig c;
  c.strategy = s;
  c.temperature = t;
  return c;
}

// Test model server on an ephemeral port.
struct FakeModel {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> completes{0};

  FakeModel() = default;
  void start() {
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeModel() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
  RemoteConfig config(int retries = 2, int timeout_ms = 2000) const {
    RemoteConfig c;
    c.url = "http://127.0.0.1:" + std::to_string(port);
    c.max_retries = retries;
    c.timeout_ms = timeout_ms;
    c.backoff_initial_ms = 1;
    c.backoff_max_ms = 4;
    return c;
  }
};

GeneratorError::Kind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const GeneratorError& e) {
    return e.kind();
  }
  FAIL("no GeneratorError raised");
  return GeneratorError::Kind::kInvalid;
}

}  // namespace

TEST_SUITE("sampler") {
  TEST_CASE("greedy is one-hot on the first maximum") {
    std::vector<double> logits{-2.0, -0.5, -0.5, -3.0};
    auto p = filtered_distribution(logits, cfg(Strategy::kGreedy));
    CHECK(p == std::vector<double>{0, 1, 0, 0});
  }

  TEST_CASE("temperature softmax matches the closed form") {
    std::vector<double> logits{0.0, -1.0};
    for (double t : {0.1, 0.5, 1.0}) {
      auto p = filtered_distribution(logits, cfg(Strategy::kTopP, t));
      double expected = 1.0 / (1.0 + std::exp(-1.0 / t));
      CHECK(p[0] == doctest::Approx(expected).epsilon(1e-12));
      CHECK(p[0] + p[1] == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("top-k and nucleus truncation") {
    std::vector<double> logits{std::log(0.5), std::log(0.3), std::log(0.2)};
    DecodingConfig k2 = cfg(Strategy::kTopK);
    k2.k = 2;
    auto pk = filtered_distribution(logits, k2);
    CHECK(pk[0] == doctest::Approx(0.625));
    CHECK(pk[1] == doctest::Approx(0.375));
    CHECK(pk[2] == 0.0);
    DecodingConfig p7 = cfg(Strategy::kTopP);
    p7.p = 0.7;
    auto pp = filtered_distribution(logits, p7);
    CHECK(pp[0] == doctest::Approx(0.625));
    CHECK(pp[2] == 0.0);
    p7.p = 0.4;
    auto one = filtered_distribution(logits, p7);
    CHECK(one[0] == doctest::Approx(1.0));
  }

  TEST_CASE("sampling frequencies follow the distribution") {
    std::vector<double> probs{0.6, 0.3, 0.1};
    std::mt19937_64 rng(5);
    std::vector<int> counts(3);
    const int n = 20000;
    for (int i = 0; i < n; ++i) ++counts[draw_index(probs, rng)];
    for (size_t i = 0; i < 3; ++i) CHECK(std::abs(counts[i] / double(n) - probs[i]) < 0.015);
    std::mt19937_64 a(3), b(3);
    for (int i = 0; i < 50; ++i) CHECK(uniform_unit(a) == uniform_unit(b));
  }

  TEST_CASE("config validation") {
    DecodingConfig c;
    CHECK_NOTHROW(c.validate());
    c.temperature = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = cfg(Strategy::kTopK);
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = cfg(Strategy::kTopP);
    c.p = 1.5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = DecodingConfig{};
    c.stop_sequences = {""};
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    CHECK(parse_strategy("top_p") == Strategy::kTopP);
    CHECK_THROWS_AS(parse_strategy("beam"), std::invalid_argument);
    CHECK_THROWS_AS(filtered_distribution({}, c), std::invalid_argument);
  }
}

TEST_SUITE("generator") {
  TEST_CASE("stop sequences and token limits") {
    CHECK(apply_stop_sequences("a b\nc", {"\n"}) == "a b");
    CHECK(apply_stop_sequences("abcdef", {"ef", "cd"}) == "ab");
    CHECK(limit_tokens("one two  three", 2) == "one two");
    CHECK(limit_tokens(" one", 0) == "");
    DecodingConfig c;
    c.stop_sequences = {"\n"};
    c.max_new_tokens = 3;
    CHECK(finish_completion("a b c d\ne", c) == "a b c");
  }

  TEST_CASE("scripted generator plays rules in order") {
    Script s = Script::from_json(nlohmann::json::parse(R"({
      "rules": [
        {"match": "suffix", "prompt": "intents: ", "continuation": "find_train\nextra"},
        {"match": "contains", "prompt": "hotel", "outcomes": [{"text": "a", "logprob": -0.1}, {"text": "b", "logprob": -3.0}]},
        {"match": "regex", "prompt": "day: [a-z]+$", "continuation": "ok"}
      ],
      "scores": [{"match": "suffix", "prompt": "area:", "continuation": "north", "score": -1.5}],
      "char_model": {"default": -1.0, "chars": {" ": -0.25}}
    })"));
    ScriptedGenerator g(s);
    DecodingConfig c;
    c.stop_sequences = {"\n"};
    CHECK(g.complete("usr: hi\nintents: ", c) == "find_train");
    CHECK(g.complete("a hotel please", c) == "a");
    CHECK(g.complete("day: friday", c) == "ok");
    CHECK(g.log_likelihood("x area:", "north") == -1.5);
    CHECK(g.log_likelihood("x", "ab c") == -3.25);
    CHECK(g.log_likelihood("x", "") == 0.0);
    CHECK(kind_of([&] { g.complete("nothing matches", c); }) == GeneratorError::Kind::kUnmatched);
    CHECK(kind_of([&] { g.complete("", c); }) == GeneratorError::Kind::kInvalid);

    auto dist = g.outcome_distribution("hotel", cfg(Strategy::kTopP));
    CHECK(dist[0] == doctest::Approx(1.0 / (1.0 + std::exp(-2.9))));
    DecodingConfig sample = cfg(Strategy::kTopP);
    int bs = 0;
    for (std::uint64_t seed = 0; seed < 2000; ++seed) {
      sample.seed = seed;
      bs += g.complete("hotel", sample) == "b";
    }
    CHECK(std::abs(bs / 2000.0 - dist[1]) < 0.02);
    CHECK_THROWS_AS(Script::from_json(nlohmann::json::parse(R"({"rules": [{"match": "fuzzy"}]})")), GeneratorError);
    CHECK_THROWS_AS(Script::load("/nonexistent.json"), GeneratorError);
  }

  TEST_CASE("playback follows the gold conversation") {
    const auto& conv = fixtures::processed().splits.at("test").conversations;
    PlaybackGenerator g(conv, Variant::kFull);
    const ConversationRecord& mul1 = *g.find_conversation({conv[0].turns[0].user_utterance});
    DecodingConfig c;
    c.stop_sequences = {"\n"};
    std::string prompt = "<conversation_sep>\nusr: " + mul1.turns[0].user_utterance + "\n";
    CHECK(g.complete(prompt + "intents: ", c) == "<skip>");
    CHECK(g.complete(prompt + "domains: ", c) == *get_block(mul1.turns[0], Block::kDomains));
    CHECK(g.complete(prompt, c) == "all_domains: general");
    CHECK(g.log_likelihood(prompt + "domains: ", "general") == 0.0);
    CHECK(g.log_likelihood(prompt + "domains: ", "genXral") == -1.0);
    CHECK(kind_of([&] { g.complete("usr: never said\nsys: ", c); }) == GeneratorError::Kind::kUnmatched);
    CHECK(kind_of([&] { g.complete("intents: ", c); }) == GeneratorError::Kind::kUnmatched);
  }

  TEST_CASE("playback resynchronizes on an overridden slot prefix") {
    const auto& conv = fixtures::processed().splits.at("test").conversations;
    PlaybackGenerator g(conv, Variant::kFull);
    const ConversationRecord* mul2 = nullptr;
    for (const auto& c : conv)
      if (c.id == "MUL0002") mul2 = &c;
    REQUIRE(mul2);
    DecodingConfig c;
    c.stop_sequences = {"\n"};
    std::string prompt = "<conversation_sep>\nusr: " + mul2->turns[0].user_utterance + "\n";
    std::string gold = *get_block(mul2->turns[0], Block::kSlotsSearch);
    auto area = gold.find("area:");
    REQUIRE(area != std::string::npos);
    std::string partial = "slots_search: domain:attraction, area:north, name:";
    std::string rest = g.complete(prompt + partial, c);
    auto name = gold.find("name:");
    CHECK(rest == gold.substr(name + 5));
  }

  TEST_CASE("remote generator speaks the completion protocol") {
    FakeModel m;
    nlohmann::json seen;
    m.server.Post("/v1/complete", [&](const httplib::Request& req, httplib::Response& res) {
      seen = nlohmann::json::parse(req.body);
      ++m.completes;
      res.set_content(R"({"text": "domain:train, day:friday\nplans: x"})", "application/json");
    });
    m.server.Post("/v1/score", [&](const httplib::Request& req, httplib::Response& res) {
      auto j = nlohmann::json::parse(req.body);
      res.set_content(nlohmann::json{{"log_likelihood", -0.5 * j["continuation"].get<std::string>().size()}}.dump(),
                      "application/json");
    });
    m.start();
    RemoteGenerator g(m.config());
    DecodingConfig c;
    c.stop_sequences = {"\n"};
    c.seed = 42;
    CHECK(g.complete("slots_search: ", c) == "domain:train, day:friday");
    CHECK(seen["prompt"] == "slots_search: ");
    CHECK(seen["strategy"] == "greedy");
    CHECK(seen["seed"] == 42);
    CHECK(seen["stop"] == nlohmann::json::array({"\n"}));
    CHECK(g.log_likelihood("p", "abcd") == -2.0);
    CHECK(g.name() == "remote:" + m.config().url);
    CHECK_FALSE(g.concurrent_safe());
    CHECK(make_concurrent(std::make_shared<RemoteGenerator>(m.config()))->concurrent_safe());
  }

  TEST_CASE("remote generator retries server errors") {
    FakeModel m;
    m.server.Post("/v1/complete", [&](const httplib::Request&, httplib::Response& res) {
      if (++m.completes < 3) {
        res.status = 503;
        return;
      }
      res.set_content(R"({"text": "ok"})", "application/json");
    });
    m.start();
    RemoteGenerator g(m.config(2));
    CHECK(g.complete("p", DecodingConfig{}) == "ok");
    CHECK(m.completes == 3);
    m.completes = 0;
    RemoteGenerator impatient(m.config(1));
    CHECK(kind_of([&] { impatient.complete("p", DecodingConfig{}); }) == GeneratorError::Kind::kTransport);
    CHECK(m.completes == 2);
  }

  TEST_CASE("remote generator error classes") {
    FakeModel m;
    m.server.Post("/v1/complete", [&](const httplib::Request& req, httplib::Response& res) {
      auto j = nlohmann::json::parse(req.body);
      std::string p = j["prompt"];
      if (p == "long") res.status = 413;
      else if (p == "slow") std::this_thread::sleep_for(std::chrono::milliseconds(600));
      else if (p == "bad") res.set_content("not json", "text/plain");
      else if (p == "shape") res.set_content(R"({"txt": 1})", "application/json");
      else res.status = 400;
    });
    m.start();
    RemoteGenerator g(m.config(0, 200));
    CHECK(kind_of([&] { g.complete("long", DecodingConfig{}); }) == GeneratorError::Kind::kContextOverflow);
    CHECK(kind_of([&] { g.complete("slow", DecodingConfig{}); }) == GeneratorError::Kind::kTimeout);
    CHECK(kind_of([&] { g.complete("bad", DecodingConfig{}); }) == GeneratorError::Kind::kTransport);
    CHECK(kind_of([&] { g.complete("shape", DecodingConfig{}); }) == GeneratorError::Kind::kTransport);
    CHECK(kind_of([&] { g.complete("other", DecodingConfig{}); }) == GeneratorError::Kind::kInvalid);
    DecodingConfig zero;
    zero.max_new_tokens = 0;
    CHECK(g.complete("anything", zero) == "");

    RemoteConfig down;
    down.url = "http://127.0.0.1:1";
    down.max_retries = 0;
    RemoteGenerator gone(down);
    CHECK(kind_of([&] { gone.complete("p", DecodingConfig{}); }) == GeneratorError::Kind::kTransport);
    CHECK_THROWS_AS(RemoteGenerator(RemoteConfig{}), GeneratorError);
  }
}
