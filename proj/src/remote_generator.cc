#include <algorithm>
#include <thread>

#include "httplib.h"
#include "todflow/generator.h"

namespace todflow {

namespace {

struct Endpoint {
  std::string scheme_host_port;
  std::string base_path;
};

Endpoint split_url(const std::string& url) {
  size_t scheme = url.find("://");
  size_t start = scheme == std::string::npos ? 0 : scheme + 3;
  size_t slash = url.find('/', start);
  if (slash == std::string::npos) return {url, ""};
  std::string base = url.substr(slash);
  while (!base.empty() && base.back() == '/') base.pop_back();
  return {url.substr(0, slash), base};
}

}  // namespace

RemoteGenerator::RemoteGenerator(RemoteConfig config) : config_(std::move(config)) {
  if (config_.url.empty()) throw GeneratorError(GeneratorError::Kind::kInvalid, "remote generator url is empty");
  if (config_.timeout_ms <= 0) throw GeneratorError(GeneratorError::Kind::kInvalid, "timeout_ms must be positive");
}

nlohmann::json RemoteGenerator::complete_request(std::string_view prompt, const DecodingConfig& config) {
  nlohmann::json body;
  body["prompt"] = std::string(prompt);
  body["strategy"] = std::string(to_string(config.strategy));
  body["k"] = config.k;
  body["p"] = config.p;
  body["temperature"] = config.temperature;
  body["max_new_tokens"] = config.max_new_tokens;
  body["stop"] = config.stop_sequences;
  body["seed"] = config.seed;
  return body;
}

nlohmann::json RemoteGenerator::post(const std::string& path, const nlohmann::json& body) {
  Endpoint ep = split_url(config_.url);
  httplib::Client client(ep.scheme_host_port);
  auto timeout = std::chrono::milliseconds(config_.timeout_ms);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  std::string payload = body.dump();
  int backoff = config_.backoff_initial_ms;
  std::string last_error;
  GeneratorError::Kind last_kind = GeneratorError::Kind::kTransport;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
      backoff = std::min(backoff * 2, config_.backoff_max_ms);
    }
    auto res = client.Post(ep.base_path + path, payload, "application/json");
    if (!res) {
      auto err = res.error();
      last_kind = err == httplib::Error::Read || err == httplib::Error::Write || err == httplib::Error::ConnectionTimeout
                      ? GeneratorError::Kind::kTimeout
                      : GeneratorError::Kind::kTransport;
      last_error = httplib::to_string(err);
      continue;
    }
    if (res->status == 413) throw GeneratorError(GeneratorError::Kind::kContextOverflow, "prompt exceeds model context");
    if (res->status >= 500) {
      last_kind = GeneratorError::Kind::kTransport;
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw GeneratorError(GeneratorError::Kind::kInvalid, "HTTP " + std::to_string(res->status) + ": " + res->body);
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw GeneratorError(GeneratorError::Kind::kTransport, std::string("malformed response: ") + e.what());
    }
  }
  throw GeneratorError(last_kind, config_.url + path + " failed after " + std::to_string(config_.max_retries + 1) +
                                      " attempts: " + last_error);
}

std::string RemoteGenerator::complete(std::string_view prompt, const DecodingConfig& config) {
  try {
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw GeneratorError(GeneratorError::Kind::kInvalid, e.what());
  }
  if (config.max_new_tokens == 0) return {};
  auto reply = post("/v1/complete", complete_request(prompt, config));
  if (!reply.contains("text") || !reply["text"].is_string())
    throw GeneratorError(GeneratorError::Kind::kTransport, "complete response lacks 'text'");
  // Servers are not trusted to honour stop sequences.
  return finish_completion(reply["text"].get<std::string>(), config);
}

double RemoteGenerator::log_likelihood(std::string_view prompt, std::string_view continuation) {
  if (continuation.empty()) return 0.0;
  nlohmann::json body{{"prompt", std::string(prompt)}, {"continuation", std::string(continuation)}};
  auto reply = post("/v1/score", body);
  if (!reply.contains("log_likelihood") || !reply["log_likelihood"].is_number())
    throw GeneratorError(GeneratorError::Kind::kTransport, "score response lacks 'log_likelihood'");
  return reply["log_likelihood"].get<double>();
}

}  // namespace todflow
