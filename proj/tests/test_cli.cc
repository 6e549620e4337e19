#include "doctest.h"
#include "support.h"

namespace {

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

std::string resources() {
  return " --db " + q(fixtures::fixture("db")) + " --ontology " + q(fixtures::ontology_path());
}

fixtures::CommandResult cli(const std::string& args) { return fixtures::run(q(fixtures::cli()) + " " + args); }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("db-query prints the count and sample") {
    auto r = cli("db-query --domain attraction --where area=centre type=park" + resources());
    CHECK(r.status == 0);
    CHECK(r.output.rfind("choice: 1\n", 0) == 0);
    CHECK(r.output.find("\"name\":\"cambridge university botanic gardens\"") != std::string::npos);
    auto all = cli("db-query --domain train --k 0" + resources());
    CHECK(all.status == 0);
    CHECK(all.output == "choice: 1235\n");
  }

  TEST_CASE("errors exit non-zero with a category") {
    auto unknown = cli("db-query --domain police" + resources());
    CHECK(unknown.status == 5);
    CHECK(unknown.output.find("error[db]") != std::string::npos);
    auto bad = cli("db-query --domain hotel --where stars" + resources());
    CHECK(bad.status == 2);
    CHECK(bad.output.find("error[usage]") != std::string::npos);
    CHECK(cli("db-query --domain hotel --where colour=red" + resources()).status == 2);
    CHECK(cli("serve --config /nonexistent/todflow.json").status == 3);
    CHECK(cli("eval --processed /nonexistent" + resources()).status != 0);
    CHECK(cli("eval --processed " + q(fixtures::processed_dir()) + " --mode oracle" + resources()).status != 0);
    CHECK(cli("eval --processed " + q(fixtures::processed_dir()) + " --generator beam" + resources()).status == 3);
    CHECK(cli("replay --processed " + q(fixtures::processed_dir()) + " --conversation NOPE" + resources()).status ==
          2);
    CHECK(cli("no-such-command").status != 0);
  }

  TEST_CASE("replay diffs against gold") {
    auto r = cli("replay --processed " + q(fixtures::processed_dir()) + " --conversation MUL0001.json --mode e2e" +
                 resources());
    CHECK(r.status == 0);
    CHECK(r.output.rfind("turn 0\n  = usr [gold]\n", 0) == 0);
    CHECK(r.output.find("  = results [backend]\n") != std::string::npos);
    CHECK(r.output.find(" differ\n") != std::string::npos);
    CHECK(r.output.find("MUL0001: 8/8 turns, ") != std::string::npos);
    CHECK(r.output.ends_with(", 0 differ\n"));
  }

  TEST_CASE("eval prints a row and writes the results file") {
    std::filesystem::path out = fixtures::scratch("cli-eval") / "results.json";
    auto r = cli("eval --processed " + q(fixtures::processed_dir()) + " --mode ctx-result --variant MIN --out " +
                 q(out) + resources());
    REQUIRE(r.status == 0);
    CHECK(r.output ==
          "| Mode | Variant | k | Inform | Success | BLEU | Combined |\n"
          "| CONTEXT_RESULT | MIN | 5 | 100.00 | 100.00 | 100.00 | 200.00 |\n");
    auto j = nlohmann::json::parse(fixtures::read_file(out));
    CHECK(j["mode"] == "CONTEXT_RESULT");
    CHECK(j["per_dialogue"].size() == 50);
    CHECK(j["combined"] == 200.0);
  }

  TEST_CASE("prepare-data writes the processed layout") {
    std::filesystem::path out = fixtures::scratch("cli-prep");
    auto r = cli("prepare-data --corpus " + q(fixtures::fixture("reference_dialogue")) + " --db " +
                 q(fixtures::fixture("db")) + " --ontology " + q(fixtures::ontology_path()) + " --pipeline " +
                 q(fixtures::pipeline_path()) + " --variant MED --out " + q(out));
    CHECK(r.status == 0);
    CHECK(r.output == "1 dialogues, 0 issues\n");
    CHECK(fixtures::read_file(out / "train.conversations.txt") ==
          fixtures::read_file(fixtures::fixture("golden/MUL0001.MED.txt")));
    for (const char* f : {"manifest.json", "issues.log", "train.tokens.txt", "valid.conversations.txt",
                          "test.conversations.txt", "test.meta.json"})
      CHECK(std::filesystem::exists(out / f));
    CHECK(cli("prepare-data --corpus x --db y --ontology z --variant HUGE --out w").status != 0);
  }
}
