#pragma once

// Random but well-formed turn records for round-trip properties.

#include <random>
#include <string>
#include <vector>

#include "todflow/wire_format.h"

namespace fixtures {

class RecordFactory {
 public:
  explicit RecordFactory(std::uint64_t seed) : rng_(seed) {}

  todflow::TurnRecord next() {
    using namespace todflow;
    TurnRecord t;
    t.user_utterance = sentence(1);
    t.system_response = sentence(0);
    if (coin()) t.intents = words(1, 3);
    if (coin()) t.entities = pairs(1, 4);
    if (coin()) t.all_entities = pairs(1, 6);
    if (coin()) t.all_domains = domains(1, 3);
    if (coin()) t.domains = domains(1, 2);
    if (coin()) t.slots_search = maps(1, 2);
    if (coin()) t.slots_booking = maps(1, 2);
    if (coin()) t.slots_requestable = payloads(true);
    if (coin()) {
      std::vector<DomainPlans> plans;
      for (auto& d : domains(1, 2)) plans.push_back({d, pick_many({"search", "booking", "reqmore", "bye"}, 1, 2)});
      t.plans = plans;
    }
    if (coin()) {
      std::vector<ApiAction> acts;
      for (auto& d : domains(1, 2)) {
        std::string plan = pick({"search", "booking"});
        acts.push_back({d, plan, plan == "booking" && coin() ? ApiVerb::kRetrieve : ApiVerb::kExecute});
      }
      t.api_acts = acts;
    }
    if (coin()) t.results = payloads(coin());
    if (coin()) {
      std::vector<DialogueAct> acts;
      int n = range(1, 3);
      for (int i = 0; i < n; ++i) {
        DialogueAct a;
        a.domain = pick({"train", "hotel", "restaurant", "general"});
        a.plan = pick({"search", "booking", "reqmore", "bye"});
        a.status = ActStatus::kNoError;
        if (a.plan == "booking" && coin()) a.status = ActStatus::kNoBook;
        if (a.plan == "search" && coin()) a.status = ActStatus::kNoOffer;
        a.act = static_cast<ActType>(range(0, 6));
        if (coin()) {
          SlotPairs ps;
          int m = range(1, 3);
          for (int j = 0; j < m; ++j) ps.push_back({pick({"Ref", "Ticket", "Choice", "Day", "Time"}), value()});
          a.slot_values = ps;
        }
        acts.push_back(a);
      }
      t.dlg_acts = acts;
    }
    if (coin()) t.delex = sentence(0) + " [" + pick({"train_id", "hotel_name", "value_time"}) + "] .";
    return t;
  }

 private:
  bool coin() { return rng_() % 2 == 0; }
  int range(int lo, int hi) { return lo + static_cast<int>(rng_() % static_cast<std::uint64_t>(hi - lo + 1)); }
  std::string pick(std::initializer_list<const char*> xs) {
    auto it = xs.begin();
    std::advance(it, rng_() % xs.size());
    return *it;
  }
  std::vector<std::string> pick_many(std::initializer_list<const char*> xs, int lo, int hi) {
    std::vector<std::string> out;
    int n = range(lo, hi);
    for (int i = 0; i < n; ++i) out.push_back(pick(xs));
    return out;
  }
  std::string word() {
    static const char* vocab[] = {"i",     "need", "a",      "train", "to",     "cambridge", "on",  "friday",
                                  "table", "for",  "people", "at",    "10:15",  "16.50",     "yes", "please",
                                  "it's",  "the",  "centre", "o'clock", "\"hi\"", "(maybe)", "[x]", "a,b"};
    return vocab[rng_() % (sizeof vocab / sizeof *vocab)];
  }
  std::vector<std::string> words(int lo, int hi) {
    std::vector<std::string> out;
    int n = range(lo, hi);
    for (int i = 0; i < n; ++i) out.push_back(pick({"find_train", "request_booking", "bye", "inform"}));
    return out;
  }
  std::string sentence(int min_words) {
    std::string s;
    int n = range(min_words, 10);
    for (int i = 0; i < n; ++i) s += (i ? " " : "") + word();
    if (s.empty()) s = "ok";
    return s;
  }
  std::string value() {
    switch (range(0, 5)) {
      case 0: return "?";
      case 1: return "dontcare";
      case 2: return "08:15";
      case 3: return "caffe uno";
      case 4: return "16.5 pounds";
      default: return "E75VHN9I ";
    }
  }
  std::vector<std::string> domains(int lo, int hi) { return pick_many({"train", "hotel", "restaurant", "general"}, lo, hi); }
  todflow::SlotPairs pairs(int lo, int hi) {
    todflow::SlotPairs out;
    int n = range(lo, hi);
    for (int i = 0; i < n; ++i) out.push_back({pick({"people", "day", "time", "name", "confirm", "arriveBy"}), pick({"1", "friday", "10:15", "caffe uno", "yes", "?"})});
    return out;
  }
  std::vector<todflow::SlotMap> maps(int lo, int hi) {
    std::vector<todflow::SlotMap> out;
    int n = range(lo, hi);
    for (int i = 0; i < n; ++i) {
      todflow::SlotMap m{pick({"train", "hotel", "restaurant"}), {}};
      for (auto& p : pairs(1, 4))
        if (!m.find(p.slot)) m.pairs.push_back(p);
      out.push_back(m);
    }
    return out;
  }
  std::vector<todflow::DomainPayload> payloads(bool booked) {
    std::vector<todflow::DomainPayload> out;
    std::string d = pick({"train", "hotel", "restaurant"});
    if (booked)
      out.push_back({d, "booked:[{'name': 'caffe uno', 'reference': '3UH2KQDP'}]"});
    else
      out.push_back({d, "['Choice', " + std::to_string(range(0, 40)) +
                            "], ['Sample', [{'id': '1', 'name': \"it's here\", 'area': 'centre'}]]"});
    return out;
  }

  std::mt19937_64 rng_;
};

}  // namespace fixtures
