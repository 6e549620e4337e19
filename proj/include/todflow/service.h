#pragma once

// HTTP surface over sessions, traces and overrides, plus the grounding data
// (ontology, database search) a console needs.

#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "todflow/config.h"
#include "todflow/db.h"
#include "todflow/flow.h"
#include "todflow/ontology.h"

namespace httplib {
class Server;
}

namespace todflow {

class Service {
 public:
  // Loads ontology, databases and (when configured) the processed corpus.
  explicit Service(ServiceConfig config);
  Service(ServiceConfig config, Ontology ontology, Database db, std::vector<ConversationRecord> gold);

  void mount(httplib::Server& server);

  const Ontology& ontology() const { return ontology_; }
  const Database& db() const { return db_; }

 private:
  struct Entry {
    std::string id;
    std::string created_at;
    Mode mode = Mode::kEndToEnd;
    Variant variant = Variant::kFull;
    std::string generator;
    std::uint64_t seed = 0;
    std::mutex mu;
    std::unique_ptr<Session> session;
    std::vector<std::string> utterances;
  };

  nlohmann::json descriptor(const Entry& e) const;
  std::shared_ptr<Entry> find(const std::string& id) const;
  std::shared_ptr<Generator> generator_for(const std::string& spec, Variant variant);
  const TurnRecord* gold_turn(const std::vector<std::string>& utterances) const;

  ServiceConfig config_;
  Ontology ontology_;
  Database db_;
  std::vector<ConversationRecord> gold_;

  mutable std::shared_mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  size_t next_id_ = 1;

  std::mutex generators_mu_;
  std::map<std::string, std::shared_ptr<Generator>> generators_;
};

}  // namespace todflow
