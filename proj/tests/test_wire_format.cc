#include "doctest.h"
#include "random_records.h"
#include "support.h"
#include "todflow/text.h"

using namespace todflow;

namespace {

std::string golden(const char* variant) {
  return fixtures::read_file(fixtures::fixture(std::string("golden/MUL0001.") + variant + ".txt"));
}

std::vector<std::string> lines_of(const std::string& text) { return split_lines(text); }

}  // namespace

TEST_SUITE("wire_format") {
  TEST_CASE("golden conversation parses and re-serializes byte for byte") {
    for (auto [name, v] : {std::pair{"FULL", Variant::kFull}, {"MED", Variant::kMed}, {"MIN", Variant::kMin}}) {
      CAPTURE(name);
      std::string text = golden(name);
      ConversationRecord conv = parse_conversation(text);
      CHECK(conv.turns.size() == 8);
      CHECK(serialize_conversation(conv, v) == text);
    }
  }

  TEST_CASE("golden turn structure") {
    ConversationRecord conv = parse_conversation(golden("FULL"));
    const TurnRecord& t0 = conv.turns[0];
    CHECK(t0.user_utterance == "I am looking for information in Cambridge.");
    CHECK_FALSE(t0.intents);
    CHECK(t0.domains == std::vector<std::string>{"general"});
    const TurnRecord& t2 = conv.turns[2];
    REQUIRE(t2.entities);
    CHECK(render_pairs(*t2.entities) == "people:1, day:friday, time:10:15");
    REQUIRE(t2.slots_booking);
    CHECK(*(*t2.slots_booking)[0].find("time") == "10:15");
    REQUIRE(t2.api_acts);
    CHECK((*t2.api_acts)[0] == ApiAction{"restaurant", "booking", ApiVerb::kExecute});
    REQUIRE(t2.results);
    CHECK((*t2.results)[0].payload == "booked:[{'name': 'caffe uno', 'reference': '3UH2KQDP'}]");
    const TurnRecord& t1 = conv.turns[1];
    REQUIRE(t1.dlg_acts);
    const DialogueAct& a = (*t1.dlg_acts)[0];
    CHECK(a.plan == "booking");
    CHECK(a.act == ActType::kRequest);
    REQUIRE(a.slot_values);
    CHECK(a.slot_values->size() == 3);
  }

  TEST_CASE("variants drop exactly their excluded lines") {
    auto full = lines_of(golden("FULL"));
    for (auto [name, v] : {std::pair{"MED", Variant::kMed}, {"MIN", Variant::kMin}}) {
      CAPTURE(name);
      std::vector<std::string> expected;
      for (const auto& l : full) {
        auto colon = l.find(':');
        auto b = colon == std::string::npos ? std::nullopt : block_from_key(l.substr(0, colon));
        if (!b || !variant_excludes(v, *b)) expected.push_back(l);
      }
      CHECK(lines_of(golden(name)) == expected);
    }
    CHECK(variant_excludes(Variant::kMed, Block::kAllEntities));
    CHECK(variant_excludes(Variant::kMed, Block::kAllDomains));
    CHECK_FALSE(variant_excludes(Variant::kMed, Block::kPlans));
    CHECK(variant_excludes(Variant::kMin, Block::kPlans));
    CHECK_FALSE(variant_excludes(Variant::kFull, Block::kPlans));
    CHECK_THROWS_AS(parse_variant("LARGE"), WireFormatError);
  }

  TEST_CASE("block keys") {
    CHECK(all_blocks().front() == Block::kUsr);
    CHECK(all_blocks().back() == Block::kSys);
    CHECK(block_from_key("slots_book") == Block::kSlotsBooking);
    CHECK(block_from_key("slots_booking") == Block::kSlotsBooking);
    CHECK_FALSE(block_from_key("belief"));
    for (Block b : all_blocks()) CHECK(block_from_key(block_key(b)) == b);
  }

  TEST_CASE("grammar-level parsers") {
    auto maps = parse_slot_maps("domain:train, day:friday, leaveAt:?, domain:hotel, stars:4");
    REQUIRE(maps.size() == 2);
    CHECK(maps[1].domain == "hotel");
    CHECK(render_slot_maps(maps) == "domain:train, day:friday, leaveAt:?, domain:hotel, stars:4");
    auto acts = parse_dialogue_act("domain:train, booking-noerror-offerbooked:[['Ref', 'E75VHN9I '], ['Ticket', '16.50 GBP']], domain:general, reqmore-noerror-inform");
    REQUIRE(acts.size() == 2);
    CHECK(acts[0].act == ActType::kOfferBooked);
    CHECK((*acts[0].slot_values)[0].value == "E75VHN9I ");
    CHECK_FALSE(acts[1].slot_values);
    auto api = parse_api_action("domain:train, booking-retrieve");
    CHECK(api[0].action == ApiVerb::kRetrieve);
    auto plans = parse_plans("domain:restaurant, search, booking");
    CHECK(plans[0].plans == std::vector<std::string>{"search", "booking"});
    auto payload = parse_payloads("domain:attraction, ['Choice', 44], ['Sample', [{'name': 'a, b'}]]");
    REQUIRE(payload.size() == 1);
    CHECK(payload[0].payload == "['Choice', 44], ['Sample', [{'name': 'a, b'}]]");
  }

  TEST_CASE("malformed input raises") {
    CHECK_THROWS_AS(parse_slot_maps("day:friday"), WireFormatError);
    CHECK_THROWS_AS(parse_slot_maps("domain:train, day:friday, day:monday"), WireFormatError);
    CHECK_THROWS_AS(parse_api_action("domain:train, search-retrieve"), WireFormatError);
    CHECK_THROWS_AS(parse_api_action("booking-execute"), WireFormatError);
    CHECK_THROWS_AS(parse_dialogue_act("domain:train, search-nobook-inform"), WireFormatError);
    CHECK_THROWS_AS(parse_dialogue_act("domain:train, booking-nooffer-inform"), WireFormatError);
    CHECK_THROWS_AS(parse_dialogue_act("domain:train, search-noerror-shout"), WireFormatError);
    CHECK_THROWS_AS(parse_dialogue_act("domain:train, search-inform"), WireFormatError);
    CHECK_THROWS_AS(parse_pairs("novalue"), WireFormatError);
    CHECK_THROWS_AS(parse_turn("usr: hi\nbogus: x\n"), WireFormatError);
    CHECK_THROWS_AS(parse_turn("usr: hi\nusr: again\n"), WireFormatError);
    CHECK_THROWS_AS(parse_conversation("usr: hi\nsys: ok\n<turn_sep>\n"), WireFormatError);
    CHECK_THROWS_AS(parse_conversation("<conversation_sep>\nusr: hi\nsys: ok\n<turn_sep>\n"), WireFormatError);
    CHECK_THROWS_AS(parse_conversation("<conversation_sep>\n<conversation_sep>\n"), WireFormatError);
  }

  TEST_CASE("validation rejects unserializable records") {
    TurnRecord t;
    t.user_utterance = "hi";
    t.system_response = "hello";
    CHECK_NOTHROW(validate_turn(t));
    TurnRecord nl = t;
    nl.system_response = "two\nlines";
    CHECK_THROWS_AS(validate_turn(nl), WireFormatError);
    TurnRecord empty = t;
    empty.user_utterance = "";
    CHECK_THROWS_AS(validate_turn(empty), WireFormatError);
    TurnRecord comma = t;
    comma.entities = SlotPairs{{"name", "a, b"}};
    CHECK_THROWS_AS(validate_turn(comma), WireFormatError);
  }

  TEST_CASE("block accessors") {
    TurnRecord t;
    t.user_utterance = "hi";
    set_block(t, Block::kSlotsSearch, std::string("domain:hotel, area:north"));
    CHECK(get_block(t, Block::kSlotsSearch) == "domain:hotel, area:north");
    set_block(t, Block::kSlotsSearch, std::nullopt);
    CHECK_FALSE(t.slots_search);
    CHECK_THROWS_AS(set_block(t, Block::kApiActs, std::string("domain:hotel, search")), WireFormatError);
  }

  TEST_CASE("random records round trip") {
    fixtures::RecordFactory factory(7);
    for (int i = 0; i < 2000; ++i) {
      TurnRecord t = factory.next();
      std::string text = serialize_turn(t, Variant::kFull);
      REQUIRE(parse_turn(text) == t);
    }
  }

  TEST_CASE("processed fixture corpus round trips") {
    size_t turns = 0;
    for (const auto& [name, split] : fixtures::processed().splits)
      for (const auto& conv : split.conversations) {
        ConversationRecord back = parse_conversation(serialize_conversation(conv, Variant::kFull));
        back.id = conv.id;
        CHECK(back == conv);
        turns += conv.turns.size();
      }
    CHECK(turns > 300);
  }
}
