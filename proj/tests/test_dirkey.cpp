#include "routelens/dirkey.hpp"

#include <catch_amalgamated.hpp>

#include <sstream>

#include "routelens/zoo.hpp"

using namespace routelens;

namespace {

Zoo bundled() { return load_zoo_file(std::string(ROUTELENS_DATA_DIR) + "/model_zoo.csv"); }

}  // namespace

TEST_CASE("key classification") {
  KeyCompiler kc;
  auto kind = [&](const char* raw) { return kc.classify(raw).kind; };

  CHECK(kind("NONE.") == KeyKind::nf);
  CHECK(kind("NONE") == KeyKind::nf);
  CHECK(kind("none") == KeyKind::nf);
  CHECK(kind("") == KeyKind::nf);
  CHECK(kind("  No Feedback!  ") == KeyKind::nf);
  CHECK(kind("I don't have any feedback.") == KeyKind::nf);

  CHECK(kind("I want a model with cheaper cached input.") == KeyKind::lf_pd);
  CHECK(kind("I want a model with cheaper output prices.") == KeyKind::lf_pd);
  CHECK(kind("I want a model with cheaper input prices.") == KeyKind::lf_pd);
  CHECK(kind("I WANT A MODEL WITH CHEAPER OUTPUT PRICES.") == KeyKind::lf_pd);

  CHECK(kind("I want a cheaper model.") == KeyKind::lf_gd);
  CHECK(kind("I want a faster model.") == KeyKind::lf_gd);
  CHECK(kind("give me a more expensive model") == KeyKind::lf_gd);

  CHECK(kind("make it sparkle") == KeyKind::unrecognized);
  CHECK(kind("cheapest") == KeyKind::unrecognized);  // whole-word match only

  SECTION("classification is deterministic") {
    for (const char* raw : {"NONE.", "I want a cheaper model.", "???"})
      CHECK(kc.classify(raw).kind == kc.classify(raw).kind);
  }
}

TEST_CASE("compile: precise key yields one hard clause") {
  Zoo zoo = bundled();
  KeyCompiler kc;
  auto key = kc.classify("I want a model with cheaper output prices.");
  ConstraintSet cs = kc.compile(key, zoo, SolveMode::completeness);
  REQUIRE(cs.hard.size() == 1);
  CHECK(cs.soft.empty());
  CHECK(cs.penalty == 0.0);
  CHECK(cs.budget_low == 0);
  CHECK(cs.budget_high == zoo.size());
  REQUIRE(cs.hard[0].comparisons.size() == 1);
  const auto& cmp = cs.hard[0].comparisons[0];
  CHECK(cmp.attribute == "Output Price");
  CHECK(cmp.rel == Relation::less);
  CHECK(cmp.ref == Comparison::Ref::current);
}

TEST_CASE("compile: no-feedback key is vacuous in both modes") {
  Zoo zoo = bundled();
  KeyCompiler kc;
  for (const char* raw : {"NONE", "NONE.", "", "no feedback"}) {
    auto key = kc.classify(raw);
    REQUIRE(key.kind == KeyKind::nf);
    ConstraintSet sl = kc.compile(key, zoo, SolveMode::shortlist);
    CHECK(sl.vacuous());
    CHECK(sl.budget_low == 1);
    CHECK(sl.budget_high == zoo.size());
    CHECK(sl.penalty == 0.25);
    ConstraintSet co = kc.compile(key, zoo, SolveMode::completeness);
    CHECK(co.vacuous());
    CHECK(co.penalty == 0.0);
  }
}

TEST_CASE("compile: general direction carries the configured soft family") {
  Zoo zoo = bundled();
  KeyCompiler kc;
  auto key = kc.classify("I want a cheaper model.");
  ConstraintSet cs = kc.compile(key, zoo, SolveMode::shortlist);
  CHECK(cs.hard.empty());
  REQUIRE(cs.soft.size() == 3);
  // Default weight table: output 1.0, input 1.0, cached 0.5, all vs current.
  CHECK(cs.soft[0].predicate.comparisons[0].attribute == "Output Price");
  CHECK(cs.soft[0].weight == 1.0);
  CHECK(cs.soft[1].predicate.comparisons[0].attribute == "Input Price");
  CHECK(cs.soft[1].weight == 1.0);
  CHECK(cs.soft[2].predicate.comparisons[0].attribute == "Cached Price");
  CHECK(cs.soft[2].weight == 0.5);
  for (const auto& wp : cs.soft) CHECK(wp.predicate.comparisons[0].rel == Relation::less);
  CHECK(cs.budget_low == 1);
  CHECK(cs.penalty == 0.25);

  SECTION("faster maps to the speed family with > current") {
    ConstraintSet fs = kc.compile(kc.classify("I want a faster model."), zoo,
                                  SolveMode::shortlist);
    REQUIRE(fs.soft.size() == 1);
    CHECK(fs.soft[0].predicate.comparisons[0].attribute == "Speed");
    CHECK(fs.soft[0].predicate.comparisons[0].rel == Relation::greater);
  }
}

TEST_CASE("compile errors") {
  Zoo zoo = bundled();
  KeyCompiler kc;
  SECTION("unrecognized key carries the raw string") {
    auto key = kc.classify("make it sparkle");
    try {
      kc.compile(key, zoo, SolveMode::shortlist);
      FAIL("expected compile error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::compile);
      CHECK(std::string(e.what()).find("make it sparkle") != std::string::npos);
    }
  }
  SECTION("lexicon entry pointing at an unknown attribute") {
    CompilerConfig cfg = CompilerConfig::defaults();
    cfg.lexicon.push_back({"latency", "P99 Latency"});
    KeyCompiler kc2{cfg};
    auto key = kc2.classify("I want a model with cheaper latency.");
    REQUIRE(key.kind == KeyKind::lf_pd);
    CHECK_THROWS_MATCHES(kc2.compile(key, zoo, SolveMode::shortlist), Error,
                         Catch::Matchers::Predicate<Error>([](const Error& e) {
                           return e.code() == Errc::unknown_attribute;
                         }));
  }
}

TEST_CASE("eval_predicate") {
  Zoo zoo = bundled();
  Predicate cheaper_output;
  cheaper_output.name = "Output Price < current";
  cheaper_output.comparisons.push_back(
      {"Output Price", Relation::less, Comparison::Ref::current, 0.0});

  SECTION("o3 is cheaper than GPT-4 on output price") {
    CHECK(eval_predicate(cheaper_output, zoo.by_id(23), zoo.by_id(11), zoo) == 1);
  }
  SECTION("strict relation is irreflexive") {
    for (int id = 1; id <= zoo.size(); ++id)
      CHECK(eval_predicate(cheaper_output, zoo.by_id(id), zoo.by_id(id), zoo) == 0);
  }
  SECTION("missing candidate value fails the comparison") {
    Predicate cheaper_cached;
    cheaper_cached.comparisons.push_back(
        {"Cached Price", Relation::less, Comparison::Ref::current, 0.0});
    // ChatGPT-4o has no cached price; GPT-4.1 has 0.5.
    CHECK(eval_predicate(cheaper_cached, zoo.by_id(1), zoo.by_id(2), zoo) == 0);
  }
  SECTION("missing current value fails the comparison") {
    Predicate cheaper_cached;
    cheaper_cached.comparisons.push_back(
        {"Cached Price", Relation::less, Comparison::Ref::current, 0.0});
    CHECK(eval_predicate(cheaper_cached, zoo.by_id(18), zoo.by_id(1), zoo) == 0);
  }
  SECTION("totality over every endpoint pair") {
    Predicate mixed;
    mixed.comparisons.push_back({"Cached Price", Relation::less, Comparison::Ref::current, 0.0});
    mixed.comparisons.push_back(
        {"Context Window", Relation::greater_eq, Comparison::Ref::quantile, 0.5});
    for (const auto& a : zoo.endpoints)
      for (const auto& b : zoo.endpoints) {
        int v = eval_predicate(mixed, a, b, zoo);
        CHECK((v == 0 || v == 1));
      }
  }
  SECTION("agrees with a direct scan for the cheaper-output key") {
    int j = zoo.attribute_index("Output Price");
    for (const auto& cand : zoo.endpoints)
      for (const auto& cur : zoo.endpoints) {
        const auto& a = zoo.value(cand, j);
        const auto& b = zoo.value(cur, j);
        int expected = (!a.missing() && !b.missing() && *a.number < *b.number) ? 1 : 0;
        CHECK(eval_predicate(cheaper_output, cand, cur, zoo) == expected);
      }
  }
}

TEST_CASE("compiler config parsing") {
  std::string text =
      "# test config\n"
      "nf nothing to add\n"
      "dir cheaper price lower\n"
      "dir more expensive price higher\n"
      "attr output prices = Output Price\n"
      "gd price Output Price 2.0\n"
      "baseline price Output Price\n"
      "lambda 0.5\n"
      "budget_low 2\n"
      "budget_high 7\n";
  std::istringstream in(text);
  CompilerConfig cfg = CompilerConfig::parse(in);
  CHECK(cfg.penalty == 0.5);
  CHECK(cfg.budget_low == 2);
  CHECK(cfg.budget_high == 7);
  REQUIRE(cfg.directions.size() == 2);
  CHECK(cfg.directions[1].phrase == "more expensive");
  CHECK_FALSE(cfg.directions[1].lower);
  REQUIRE(cfg.soft_rules.size() == 1);
  CHECK(cfg.soft_rules[0].weight == 2.0);

  KeyCompiler kc{cfg};
  CHECK(kc.classify("nothing to add").kind == KeyKind::nf);
  CHECK(kc.classify("something cheaper").kind == KeyKind::lf_gd);
  CHECK(kc.classify("cheaper output prices please").kind == KeyKind::lf_pd);

  SECTION("bad directive is a config error") {
    std::istringstream bad("frobnicate 1\n");
    CHECK_THROWS_MATCHES(CompilerConfig::parse(bad), Error,
                         Catch::Matchers::Predicate<Error>([](const Error& e) {
                           return e.code() == Errc::config;
                         }));
  }
  SECTION("the shipped config file parses and matches the defaults") {
    std::ifstream file(std::string(ROUTELENS_DATA_DIR) + "/dirkey.conf");
    REQUIRE(file.good());
    CompilerConfig shipped = CompilerConfig::parse(file);
    CompilerConfig defs = CompilerConfig::defaults();
    CHECK(shipped.penalty == defs.penalty);
    CHECK(shipped.budget_low == defs.budget_low);
    REQUIRE(shipped.directions.size() == defs.directions.size());
    for (std::size_t i = 0; i < defs.directions.size(); ++i) {
      CHECK(shipped.directions[i].phrase == defs.directions[i].phrase);
      CHECK(shipped.directions[i].family == defs.directions[i].family);
      CHECK(shipped.directions[i].lower == defs.directions[i].lower);
    }
    REQUIRE(shipped.soft_rules.size() == defs.soft_rules.size());
    for (std::size_t i = 0; i < defs.soft_rules.size(); ++i)
      CHECK(shipped.soft_rules[i].weight == defs.soft_rules[i].weight);
    KeyCompiler kc2{shipped};
    CHECK(kc2.classify("NONE.").kind == KeyKind::nf);
    CHECK(kc2.classify("I want a cheaper model.").kind == KeyKind::lf_gd);
  }
}
