#include "todflow/config.h"

#include <cstdlib>
#include <fstream>

#include "todflow/text.h"

namespace todflow {

namespace fs = std::filesystem;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& dst) {
  if (j.contains(key) && !j[key].is_null()) dst = j[key].get<T>();
}

}  // namespace

MismatchPolicy parse_mismatch_policy(std::string_view s) {
  if (s == "replace-with-computed") return MismatchPolicy::kReplaceWithComputed;
  if (s == "keep-generated") return MismatchPolicy::kKeepGenerated;
  throw ConfigError("unknown mismatch policy '" + std::string(s) + "'");
}

ResponsePolicy parse_response_policy(std::string_view s) {
  if (s == "generate") return ResponsePolicy::kGenerate;
  if (s == "fallback") return ResponsePolicy::kFallback;
  if (s == "lexicalize") return ResponsePolicy::kLexicalize;
  throw ConfigError("unknown response policy '" + std::string(s) + "'");
}

ServiceConfig ServiceConfig::from_json(const nlohmann::json& j, const fs::path& base_dir) {
  ServiceConfig c;
  try {
    if (!j.contains("ontology") || !j.contains("db")) throw ConfigError("config needs 'ontology' and 'db'");
    c.ontology = resolve(base_dir, j["ontology"].get<std::string>());
    c.db = resolve(base_dir, j["db"].get<std::string>());
    if (j.contains("processed") && !j["processed"].is_null())
      c.processed = resolve(base_dir, j["processed"].get<std::string>());
    read(j, "generator", c.generator);
    read(j, "host", c.host);
    read(j, "port", c.port);
    read(j, "max_sessions", c.max_sessions);
    if (j.contains("defaults")) {
      const auto& d = j["defaults"];
      if (d.contains("mode")) c.flow.mode = parse_mode(d["mode"].get<std::string>());
      if (d.contains("variant")) c.flow.variant = parse_variant(d["variant"].get<std::string>());
      read(d, "k", c.flow.k);
      read(d, "seed", c.flow.seed);
    }
    if (j.contains("decoding")) {
      const auto& d = j["decoding"];
      if (d.contains("strategy")) c.flow.decoding.strategy = parse_strategy(d["strategy"].get<std::string>());
      read(d, "k", c.flow.decoding.k);
      read(d, "p", c.flow.decoding.p);
      read(d, "temperature", c.flow.decoding.temperature);
      read(d, "max_new_tokens", c.flow.decoding.max_new_tokens);
      c.flow.decoding.validate();
    }
    if (j.contains("remote")) {
      const auto& r = j["remote"];
      read(r, "url", c.remote.url);
      read(r, "timeout_ms", c.remote.timeout_ms);
      read(r, "max_retries", c.remote.max_retries);
      read(r, "backoff_initial_ms", c.remote.backoff_initial_ms);
      read(r, "backoff_max_ms", c.remote.backoff_max_ms);
      read(r, "concurrent", c.remote.concurrent);
    }
    if (j.contains("policies")) {
      const auto& p = j["policies"];
      if (p.contains("verification_mismatch"))
        c.flow.mismatch = parse_mismatch_policy(p["verification_mismatch"].get<std::string>());
      if (p.contains("response")) c.flow.response = parse_response_policy(p["response"].get<std::string>());
      read(p, "grounded_slots", c.flow.grounded_slots);
      read(p, "grounded_temperature", c.flow.grounded_temperature);
      if (p.contains("grounded_mode"))
        c.flow.grounded_mode = p["grounded_mode"].get<std::string>() == "sample" ? SelectMode::kSample : SelectMode::kArgmax;
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  parse_generator_spec(c.generator);
  return c;
}

ServiceConfig load_service_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return ServiceConfig::from_json(j, path.parent_path());
}

fs::path default_config_path() {
  if (const char* env = std::getenv("TODFLOW_CONFIG"); env && *env) return env;
  return "config/todflow.json";
}

std::string GeneratorSpec::text() const {
  switch (kind) {
    case Kind::kPlayback:
      return "playback";
    case Kind::kScripted:
      return "scripted:" + arg;
    case Kind::kRemote:
      return "remote:" + arg;
  }
  return "";
}

GeneratorSpec parse_generator_spec(std::string_view s) {
  GeneratorSpec g;
  if (s == "playback") return g;
  if (s.rfind("scripted:", 0) == 0) {
    g.kind = GeneratorSpec::Kind::kScripted;
    g.arg = std::string(s.substr(9));
  } else if (s.rfind("remote:", 0) == 0) {
    g.kind = GeneratorSpec::Kind::kRemote;
    g.arg = std::string(s.substr(7));
  } else {
    throw ConfigError("unknown generator '" + std::string(s) + "'");
  }
  if (g.arg.empty()) throw ConfigError("generator '" + std::string(s) + "' needs an argument");
  return g;
}

std::shared_ptr<Generator> make_generator(const GeneratorSpec& spec, Variant variant,
                                          const std::vector<ConversationRecord>& gold, const RemoteConfig& remote) {
  switch (spec.kind) {
    case GeneratorSpec::Kind::kPlayback:
      return std::make_shared<PlaybackGenerator>(gold, variant);
    case GeneratorSpec::Kind::kScripted:
      try {
        return std::make_shared<ScriptedGenerator>(Script::load(spec.arg));
      } catch (const std::exception& e) {
        throw ConfigError("cannot load script " + spec.arg + ": " + e.what());
      }
    case GeneratorSpec::Kind::kRemote: {
      RemoteConfig rc = remote;
      rc.url = spec.arg;
      return make_concurrent(std::make_shared<RemoteGenerator>(rc));
    }
  }
  throw ConfigError("unknown generator");
}

}  // namespace todflow
