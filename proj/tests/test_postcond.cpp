#include "routelens/postcond.hpp"

#include <catch_amalgamated.hpp>

#include <string>

using namespace routelens;

TEST_CASE("mask processing rules") {
  SECTION("short replies are padded with zeros") {
    OutputMask m = process_mask("1 0 1", 5);
    CHECK(m.bits == std::vector<int>{1, 0, 1, 0, 0});
    CHECK(m.fail_flag);
    CHECK(m.source_token_count == 3);
  }
  SECTION("long replies are truncated to the first M tokens") {
    std::string raw;
    for (int i = 0; i < 27; ++i) raw += "1 ";
    OutputMask m = process_mask(raw, 25);
    CHECK((int)m.bits.size() == 25);
    CHECK(m.popcount() == 25);
    CHECK(m.fail_flag);
    CHECK(m.source_token_count == 27);
  }
  SECTION("garbage yields an all-zero mask that classifies ZERO") {
    OutputMask m = process_mask("no recommendation", 25);
    CHECK(m.popcount() == 0);
    CHECK(m.fail_flag);
    CHECK(m.source_token_count == 0);
    CHECK(classify(m).label == Outcome::zero);
    CHECK(classify(m).fail_flag);
  }
  SECTION("an exact reply is not a failure") {
    OutputMask m = process_mask("0 1 0", 3);
    CHECK(m.bits == std::vector<int>{0, 1, 0});
    CHECK_FALSE(m.fail_flag);
  }
  SECTION("multi-digit tokens are non-binary, not split") {
    OutputMask m = process_mask("10 1 0", 3);
    CHECK(m.bits == std::vector<int>{1, 0, 0});  // "10" dropped, padded
    CHECK(m.fail_flag);
    CHECK(m.source_token_count == 2);
  }
  SECTION("stray words set the flag even with an exact count") {
    OutputMask m = process_mask("sure: 1 0 1", 3);
    CHECK(m.bits == std::vector<int>{1, 0, 1});
    CHECK(m.fail_flag);
  }
  SECTION("tabs and newlines are token separators") {
    OutputMask m = process_mask("1\t0\n1", 3);
    CHECK(m.bits == std::vector<int>{1, 0, 1});
    CHECK_FALSE(m.fail_flag);
  }
}

TEST_CASE("postcondition labels") {
  auto label_of = [](std::vector<int> bits) {
    OutputMask m;
    m.bits = std::move(bits);
    return classify(m).label;
  };
  CHECK(label_of(std::vector<int>(25, 1)) == Outcome::all);
  CHECK(label_of({0, 1, 0, 0}) == Outcome::one);
  CHECK(label_of({0, 0, 0, 0}) == Outcome::zero);
  std::vector<int> eight(25, 0);
  for (int i = 0; i < 8; ++i) eight[(std::size_t)i] = 1;
  CHECK(label_of(eight) == Outcome::case_s);
  // M = 1: a single set bit reads ONE by the cardinality order.
  CHECK(label_of({1}) == Outcome::one);

  SECTION("exactly one label holds for every mask of M <= 12") {
    for (int m_count = 1; m_count <= 12; ++m_count) {
      for (int mask = 0; mask < (1 << m_count); ++mask) {
        std::vector<int> bits;
        for (int i = 0; i < m_count; ++i) bits.push_back((mask >> i) & 1);
        OutputMask om;
        om.bits = bits;
        Outcome got = classify(om).label;
        int n = om.popcount();
        int holds = 0;
        if (n == 0) holds += got == Outcome::zero;
        if (n == 1) holds += got == Outcome::one;
        if (n == m_count) holds += got == Outcome::all;
        if (n > 1 && n < m_count) holds += got == Outcome::case_s;
        CHECK(holds == 1);
      }
    }
  }

  SECTION("the fail flag never changes the label") {
    OutputMask a = process_mask("1 1 0", 3);
    OutputMask b = process_mask("1 1 0 extra", 3);
    CHECK_FALSE(a.fail_flag);
    CHECK(b.fail_flag);
    CHECK(classify(a).label == classify(b).label);
  }
}

TEST_CASE("coverage and precision") {
  auto mask_of = [](std::vector<int> bits) {
    OutputMask m;
    m.bits = std::move(bits);
    return m;
  };

  SECTION("identity") {
    auto cp = coverage_precision(mask_of({1, 0, 1, 0}), {1, 0, 1, 0});
    CHECK(cp.coverage == 1.0);
    REQUIRE(cp.precision);
    CHECK(*cp.precision == 1.0);
  }
  SECTION("set arithmetic: C={1,2}, T={2,3,4}") {
    auto cp = coverage_precision(mask_of({1, 1, 0, 0}), {0, 1, 1, 1});
    CHECK(cp.coverage == Catch::Approx(1.0 / 3.0));
    REQUIRE(cp.precision);
    CHECK(*cp.precision == Catch::Approx(0.5));
  }
  SECTION("empty output set has undefined precision") {
    auto cp = coverage_precision(mask_of({0, 0, 0}), {1, 0, 0});
    CHECK(cp.coverage == 0.0);
    CHECK_FALSE(cp.precision.has_value());
  }
  SECTION("empty target is an error") {
    CHECK_THROWS_MATCHES(coverage_precision(mask_of({1, 0}), {0, 0}), Error,
                         Catch::Matchers::Predicate<Error>([](const Error& e) {
                           return e.code() == Errc::undefined_coverage;
                         }));
  }
  SECTION("bounds and subset identities") {
    for (int cm = 1; cm < 16; ++cm) {
      for (int tm = 1; tm < 16; ++tm) {
        std::vector<int> c, t;
        for (int i = 0; i < 4; ++i) {
          c.push_back((cm >> i) & 1);
          t.push_back((tm >> i) & 1);
        }
        auto cp = coverage_precision(mask_of(c), t);
        CHECK(cp.coverage >= 0.0);
        CHECK(cp.coverage <= 1.0);
        bool c_subset_t = true, t_subset_c = true;
        for (int i = 0; i < 4; ++i) {
          if (c[(std::size_t)i] && !t[(std::size_t)i]) c_subset_t = false;
          if (t[(std::size_t)i] && !c[(std::size_t)i]) t_subset_c = false;
        }
        if (cp.precision) {
          CHECK(*cp.precision >= 0.0);
          CHECK(*cp.precision <= 1.0);
          if (c_subset_t) CHECK(*cp.precision == 1.0);
        }
        if (t_subset_c) CHECK(cp.coverage == 1.0);
      }
    }
  }
}

TEST_CASE("outcome tally") {
  KeyCompiler kc;
  std::vector<std::pair<DirectionKey, Postcondition>> runs;
  auto add = [&](const char* key, Outcome label, int n) {
    for (int i = 0; i < n; ++i)
      runs.emplace_back(kc.classify(key), Postcondition{label, false});
  };
  add("NONE", Outcome::case_s, 101);
  add("NONE", Outcome::all, 97);
  add("NONE.", Outcome::case_s, 10);
  add("NONE.", Outcome::all, 10);
  add("I want a cheaper model.", Outcome::case_s, 5);

  auto rows = tally_outcomes(runs);
  REQUIRE(rows.size() == 3);
  // Deterministic ordering: lexicographic by key.
  CHECK(rows[0].key == "I want a cheaper model.");
  CHECK(rows[1].key == "NONE");
  CHECK(rows[2].key == "NONE.");

  CHECK(rows[1].total == 198);
  CHECK(rows[1].counts[(std::size_t)Outcome::case_s] == 101);
  CHECK(rows[1].counts[(std::size_t)Outcome::all] == 97);
  CHECK(rows[1].pct(Outcome::case_s) == Catch::Approx(51.01).margin(0.005));
  CHECK(rows[1].pct(Outcome::all) == Catch::Approx(48.99).margin(0.005));

  CHECK(rows[2].total == 20);
  CHECK(rows[2].pct(Outcome::case_s) == Catch::Approx(50.0));
  CHECK(rows[2].pct(Outcome::all) == Catch::Approx(50.0));

  CHECK(rows[0].total == 5);
  CHECK(rows[0].pct(Outcome::case_s) == Catch::Approx(100.0));

  SECTION("single run is 100% in its label") {
    auto single = tally_outcomes({{kc.classify("NONE"), Postcondition{Outcome::all, false}}});
    REQUIRE(single.size() == 1);
    CHECK(single[0].pct(Outcome::all) == Catch::Approx(100.0));
    CHECK(single[0].total == 1);
  }
}
