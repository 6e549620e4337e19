#pragma once

// Service configuration file and generator bindings shared by the CLI and
// the HTTP service.

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "todflow/flow.h"
#include "todflow/generator.h"

namespace todflow {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ServiceConfig {
  std::filesystem::path ontology;
  std::filesystem::path db;
  // Processed-data directory; its conversations back playback generators.
  std::optional<std::filesystem::path> processed;
  std::string generator = "playback";
  RemoteConfig remote;
  std::string host = "127.0.0.1";
  int port = 8080;
  size_t max_sessions = 1000;
  FlowConfig flow;

  static ServiceConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
};

ServiceConfig load_service_config(const std::filesystem::path& path);
// $TODFLOW_CONFIG when set, else config/todflow.json.
std::filesystem::path default_config_path();

MismatchPolicy parse_mismatch_policy(std::string_view s);
ResponsePolicy parse_response_policy(std::string_view s);

// "playback", "scripted:<file>" or "remote:<url>".
struct GeneratorSpec {
  enum class Kind { kPlayback, kScripted, kRemote } kind = Kind::kPlayback;
  std::string arg;
  std::string text() const;
};
GeneratorSpec parse_generator_spec(std::string_view s);

// Playback needs the gold conversations; the returned generator is safe to
// share across threads.
std::shared_ptr<Generator> make_generator(const GeneratorSpec& spec, Variant variant,
                                          const std::vector<ConversationRecord>& gold, const RemoteConfig& remote);

}  // namespace todflow
