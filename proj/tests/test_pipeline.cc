#include "doctest.h"
#include "support.h"
#include "todflow/text.h"

using namespace todflow;

namespace {

const ConversationRecord& conversation(const std::string& id) {
  for (const auto& [name, split] : fixtures::processed().splits)
    for (const auto& c : split.conversations)
      if (c.id == id) return c;
  throw std::runtime_error("missing " + id);
}

ConversationRecord tiny(const std::string& tag, size_t turns) {
  ConversationRecord c{tag, {}};
  for (size_t i = 0; i < turns; ++i) {
    TurnRecord t;
    t.user_utterance = tag + " user " + std::to_string(i);
    t.system_response = tag + " system reply number " + std::to_string(i);
    c.turns.push_back(t);
  }
  return c;
}

PipelineConfig small_config(size_t limit) {
  PipelineConfig c;
  c.max_sequence_length = limit;
  return c;
}

}  // namespace

TEST_SUITE("pipeline") {
  TEST_CASE("source dialogue reproduces the golden serializations") {
    std::filesystem::path out = fixtures::scratch("a1");
    for (auto [name, v] : {std::pair{"FULL", Variant::kFull}, {"MED", Variant::kMed}, {"MIN", Variant::kMin}}) {
      CAPTURE(name);
      auto cfg = fixtures::pipeline_config(v);
      auto r = prepare_data(fixtures::fixture("reference_dialogue"), fixtures::db(), fixtures::ontology(), cfg, out / name);
      CHECK(r.issues.empty());
      CHECK(fixtures::read_file(out / name / "train.conversations.txt") ==
            fixtures::read_file(fixtures::fixture(std::string("golden/MUL0001.") + name + ".txt")));
    }
  }

  TEST_CASE("fixture corpus splits and manifest") {
    const ProcessedData& d = fixtures::processed();
    CHECK(d.splits.at("test").conversations.size() == 50);
    CHECK(d.splits.at("valid").conversations.size() == 6);
    CHECK(d.splits.at("train").conversations.size() == 10);
    CHECK(d.splits.at("test").conversations[0].id == "MUL0001");
    CHECK(d.variant == Variant::kFull);
    CHECK(d.k == 5);
    CHECK(fixtures::read_file(fixtures::processed_dir() / "issues.log").empty());
    auto manifest = nlohmann::json::parse(fixtures::read_file(fixtures::processed_dir() / "manifest.json"));
    CHECK(manifest["ontology_version"] == "multiwoz21-fixture-1");
  }

  TEST_CASE("search results narrow from 44 centre attractions to the botanic gardens") {
    const ConversationRecord& c = conversation("MUL0002");
    REQUIRE(c.turns.size() == 10);
    const auto& r0 = (*c.turns[0].results)[0];
    CHECK(r0.domain == "attraction");
    CHECK(r0.payload.rfind("['Choice', 44], ['Sample', [", 0) == 0);
    SearchResult s1 = SearchResult::parse("attraction", (*c.turns[1].results)[0].payload);
    CHECK(s1.choice == 1);
    CHECK(*s1.sample[0].get("name") == "cambridge university botanic gardens");
    CHECK(render_slot_maps(*c.turns[1].slots_search) == "domain:attraction, area:centre, name:?, type:park");
    CHECK(render_pairs(*c.turns[1].all_entities) == "type:park, area:centre");
  }

  TEST_CASE("goals survive the processed round trip") {
    const auto& test = fixtures::processed().splits.at("test");
    const GoalSpec& g = test.goals[1];
    const DomainGoal* attraction = g.find("attraction");
    REQUIRE(attraction);
    CHECK(attraction->reqt == std::vector<std::string>{"phone", "address", "postcode"});
    CHECK(attraction->info == SlotPairs{{"area", "centre"}, {"type", "park"}});
    CHECK_FALSE(attraction->book);
    CHECK(goal_from_json(goal_to_json(g)) == g);
  }

  TEST_CASE("act status codes and plans") {
    CHECK(derive_status_code("NoBook") == std::pair{ActStatus::kNoBook, ActType::kInform});
    CHECK(derive_status_code("NoOffer") == std::pair{ActStatus::kNoOffer, ActType::kInform});
    CHECK(derive_status_code("OfferBooked") == std::pair{ActStatus::kNoError, ActType::kOfferBooked});
    CHECK_FALSE(derive_status_code("Greet"));
    const Ontology& o = fixtures::ontology();
    CHECK(classify_act_plan(o, "train", ActType::kInform, ActStatus::kNoError, {{"Ref", "X"}}) == "booking");
    CHECK(classify_act_plan(o, "train", ActType::kInform, ActStatus::kNoError, {{"Leave", "08:00"}}) == "search");
    CHECK(classify_act_plan(o, "restaurant", ActType::kRequest, ActStatus::kNoError, {{"People", "?"}}) == "booking");
    CHECK(classify_act_plan(o, "restaurant", ActType::kRequest, ActStatus::kNoError, {{"Food", "?"}}) == "search");
    CHECK(classify_act_plan(o, "attraction", ActType::kInform, ActStatus::kNoError, {{"Ref", "X"}}) == "search");
    CHECK(classify_act_plan(o, "hotel", ActType::kOfferBook, ActStatus::kNoError, {}) == "booking");
  }

  TEST_CASE("api actions follow the turn's acts and bookings") {
    const Ontology& o = fixtures::ontology();
    DomainActivity a;
    a.domain = "train";
    a.acts.push_back({"train", "search", ActStatus::kNoError, ActType::kInform, SlotPairs{{"Choice", "3"}}});
    CHECK(derive_api_actions(o, a) == std::vector<ApiAction>{{"train", "search", ApiVerb::kExecute}});
    a.booked_after = 1;
    auto both = derive_api_actions(o, a);
    REQUIRE(both.size() == 2);
    CHECK(both[1] == ApiAction{"train", "booking", ApiVerb::kExecute});
    DomainActivity again;
    again.domain = "train";
    again.booked_before = again.booked_after = 1;
    again.acts.push_back({"train", "booking", ActStatus::kNoError, ActType::kInform, SlotPairs{{"Ref", "X"}}});
    CHECK(derive_api_actions(o, again) == std::vector<ApiAction>{{"train", "booking", ApiVerb::kRetrieve}});
    DomainActivity failed;
    failed.domain = "hotel";
    failed.nobook = true;
    CHECK(derive_api_actions(o, failed) == std::vector<ApiAction>{{"hotel", "booking", ApiVerb::kExecute}});
    DomainActivity chat;
    chat.domain = "general";
    CHECK(derive_api_actions(o, chat).empty());
  }

  TEST_CASE("confirmation cues") {
    auto cues = fixtures::pipeline_config().confirm_cues;
    CHECK(confirm_cue("Yes, please book it.", cues));
    CHECK(confirm_cue("I need 3 tickets", cues));
    CHECK_FALSE(confirm_cue("What time does it leave?", cues));
    CHECK_FALSE(confirm_cue("yesterday was fine", {"yes"}));
  }

  TEST_CASE("metadata maps onto ontology slot order") {
    auto md = nlohmann::ordered_json::parse(
        R"({"book": {"booked": [], "people": "2", "day": "friday"}, "semi": {"food": "", "pricerange": "cheap", "area": "centre", "name": "not mentioned", "colour": "red"}})");
    std::vector<Issue> issues;
    auto [search, booking] = map_slots(fixtures::ontology(), "restaurant", md, &issues, "X", 3);
    CHECK(render_slot_maps({search}) == "domain:restaurant, food:?, pricerange:cheap, area:centre, name:?");
    CHECK(render_slot_maps({booking}) == "domain:restaurant, time:?, day:friday, people:2");
    REQUIRE(issues.size() == 1);
    CHECK(format_issue(issues[0]) == "dialogue_id=X\tturn=3\tcategory=unmapped_slot\tdetail=restaurant.colour");
  }

  TEST_CASE("corpus loading rejects bad input") {
    CHECK_THROWS(load_raw_corpus("/nonexistent/corpus"));
    CHECK(dialogue_key("MUL0001.json") == "MUL0001");
    PipelineConfig c;
    c.k = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    CHECK_THROWS(load_processed("/nonexistent/processed"));
  }

  TEST_CASE("conversion is deterministic") {
    RawCorpus raw = load_raw_corpus(fixtures::fixture("corpus"));
    CHECK(raw.dialogues.size() == 66);
    auto a = convert_corpus(raw.dialogues, fixtures::db(), fixtures::ontology(), fixtures::pipeline_config());
    auto b = convert_corpus(raw.dialogues, fixtures::db(), fixtures::ontology(), fixtures::pipeline_config());
    REQUIRE(a.dialogues.size() == b.dialogues.size());
    for (size_t i = 0; i < a.dialogues.size(); ++i) CHECK(a.dialogues[i].record == b.dialogues[i].record);
  }
}

TEST_SUITE("training") {
  TEST_CASE("token count is whitespace based") {
    CHECK(count_tokens("usr: hi there\n<turn_sep>\n") == 4);
    CHECK(count_tokens("") == 0);
  }

  TEST_CASE("short conversations are padded with whole turns") {
    std::vector<ConversationRecord> recs{tiny("a", 2), tiny("b", 3), tiny("c", 1)};
    PipelineConfig cfg = small_config(80);
    auto seqs = emit_training_sequences(recs, cfg);
    REQUIRE(seqs.size() == 3);
    for (const auto& s : seqs) {
      CHECK(count_tokens(s) <= 80);
      CHECK(s.rfind("<conversation_sep>\n", 0) == 0);
      CHECK(s.back() == '\n');
      CHECK((s.ends_with("<turn_sep>\n") || s.ends_with("<conversation_sep>\n")));
    }
    bool padded = seqs[0].find("usr: b user") != std::string::npos || seqs[0].find("usr: c user") != std::string::npos;
    CHECK(padded);
    CHECK(emit_training_sequences(recs, cfg) == seqs);
    cfg.padding = false;
    auto plain = emit_training_sequences(recs, cfg);
    CHECK(plain[0] == "<conversation_sep>\n" + serialize_turn(recs[0].turns[0], Variant::kFull) +
                          serialize_turn(recs[0].turns[1], Variant::kFull) + "<conversation_sep>\n");
  }

  TEST_CASE("long conversations split at turn boundaries") {
    std::vector<ConversationRecord> recs{tiny("long", 30)};
    PipelineConfig cfg = small_config(64);
    auto seqs = emit_training_sequences(recs, cfg);
    CHECK(seqs.size() > 1);
    std::set<std::string> seen;
    for (const auto& s : seqs) {
      CHECK(count_tokens(s) <= 64);
      for (const auto& line : split_lines(s))
        if (line.rfind("usr: ", 0) == 0) seen.insert(line);
    }
    CHECK(seen.size() == 30);
  }

  TEST_CASE("seed changes padding choices only") {
    std::vector<ConversationRecord> recs;
    for (int i = 0; i < 6; ++i) recs.push_back(tiny("r" + std::to_string(i), 1));
    PipelineConfig a = small_config(200), b = small_config(200);
    b.seed = 99;
    auto sa = emit_training_sequences(recs, a), sb = emit_training_sequences(recs, b);
    REQUIRE(sa.size() == sb.size());
    bool differ = false;
    for (size_t i = 0; i < sa.size(); ++i) {
      CHECK(sa[i].substr(0, 60) == sb[i].substr(0, 60));
      differ = differ || sa[i] != sb[i];
    }
    CHECK(differ);
  }

  TEST_CASE("training file joins examples with blank lines") {
    CHECK(render_training_file({"a\n", "b\n"}) == "a\n\nb\n");
    CHECK(render_training_file({}) == "");
  }
}
