#include "routelens/agentio.hpp"

#include <catch_amalgamated.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <thread>

#include "routelens/http_agent.hpp"
#include "routelens/report.hpp"

using namespace routelens;

namespace {

Zoo bundled() { return load_zoo_file(std::string(ROUTELENS_DATA_DIR) + "/model_zoo.csv"); }

std::filesystem::path temp_file(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("prompt rendering") {
  Zoo zoo = bundled();

  SECTION("no current endpoint") {
    AgentRequest req = render_prompt(zoo, nullptr, "hello", "NONE");
    CHECK(req.rendered_prompt.find("There are 25 models") != std::string::npos);
    CHECK(req.rendered_prompt.find("(none yet") != std::string::npos);
    CHECK(req.rendered_prompt.find("DIRECTION: NONE") != std::string::npos);
    CHECK(req.rendered_prompt.find(render_for_agent(zoo)) != std::string::npos);
    CHECK(req.rendered_prompt.find("[N]") == std::string::npos);
    CHECK(req.rendered_prompt.find("[Full Model Zoo CSV]") == std::string::npos);
  }

  SECTION("current endpoint row is embedded without name columns") {
    const Endpoint& cur = zoo.by_id(3);  // o4-mini
    AgentRequest req = render_prompt(zoo, &cur, "p", "I want a cheaper model.");
    CHECK(req.rendered_prompt.find(render_endpoint_row(zoo, cur)) != std::string::npos);
    CHECK(req.rendered_prompt.find("o4-mini") == std::string::npos);
  }

  SECTION("[N] substitution uses the pool size") {
    std::ifstream in(std::string(ROUTELENS_DATA_DIR) + "/model_zoo.csv");
    std::string header, r1, r2;
    std::getline(in, header);
    std::getline(in, r1);
    std::getline(in, r2);
    std::istringstream two(header + "\n" + r1 + "\n" + r2 + "\n");
    Zoo small = load_zoo(two);
    AgentRequest req = render_prompt(small, nullptr, "p", "NONE");
    CHECK(req.rendered_prompt.find("There are 2 models") != std::string::npos);
  }

  SECTION("byte-stable for fixed inputs") {
    AgentRequest a = render_prompt(zoo, nullptr, "hello", "NONE");
    AgentRequest b = render_prompt(zoo, nullptr, "hello", "NONE");
    CHECK(a.rendered_prompt == b.rendered_prompt);
  }
}

TEST_CASE("query_agent transport handling") {
  AgentRequest req{"the prompt"};
  AgentEndpointConfig cfg;
  cfg.base_url = "http://agent.test";
  cfg.model = "router-1";
  cfg.api_key_env = "";  // no credential for fakes
  cfg.backoff_ms = 1;

  auto ok_body = [](const std::string& content) {
    nlohmann::json j;
    j["choices"] = nlohmann::json::array(
        {{{"message", {{"role", "assistant"}, {"content", content}}}}});
    return j.dump();
  };

  SECTION("echoes the reply verbatim and sends the prompt") {
    std::string seen_body;
    Transport t = [&](const TransportRequest& tr) {
      seen_body = tr.body;
      return TransportResult{true, 200, ok_body("1 0 1"), ""};
    };
    CHECK(query_agent(req, cfg, t) == "1 0 1");
    auto sent = nlohmann::json::parse(seen_body);
    CHECK(sent["model"] == "router-1");
    CHECK(sent["messages"][0]["content"] == "the prompt");
  }

  SECTION("two transient failures then success") {
    std::atomic<int> calls{0};
    Transport t = [&](const TransportRequest&) {
      int n = ++calls;
      if (n <= 2) return TransportResult{false, 0, "", "connection reset"};
      return TransportResult{true, 200, ok_body("0 0 1"), ""};
    };
    CHECK(query_agent(req, cfg, t) == "0 0 1");
    CHECK(calls.load() == 3);
  }

  SECTION("exhausted retries carry the attempt count") {
    std::atomic<int> calls{0};
    Transport t = [&](const TransportRequest&) {
      ++calls;
      return TransportResult{false, 0, "", "timeout"};
    };
    try {
      query_agent(req, cfg, t);
      FAIL("expected transport error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::transport);
      CHECK(std::string(e.what()).find("4 attempts") != std::string::npos);
    }
    CHECK(calls.load() == cfg.max_retries + 1);
  }

  SECTION("non-transient status is not retried") {
    std::atomic<int> calls{0};
    Transport t = [&](const TransportRequest&) {
      ++calls;
      return TransportResult{true, 404, "no such model", ""};
    };
    CHECK_THROWS_MATCHES(query_agent(req, cfg, t), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::status; }));
    CHECK(calls.load() == 1);
  }

  SECTION("5xx is retried as transient") {
    std::atomic<int> calls{0};
    Transport t = [&](const TransportRequest&) {
      ++calls;
      return TransportResult{true, 503, "overloaded", ""};
    };
    CHECK_THROWS_MATCHES(query_agent(req, cfg, t), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::transport; }));
    CHECK(calls.load() == cfg.max_retries + 1);
  }

  SECTION("missing credential is a config error") {
    AgentEndpointConfig need_key = cfg;
    need_key.api_key_env = "ROUTELENS_TEST_KEY_UNSET";
    unsetenv("ROUTELENS_TEST_KEY_UNSET");
    Transport t = [&](const TransportRequest&) {
      return TransportResult{true, 200, ok_body("1"), ""};
    };
    CHECK_THROWS_MATCHES(query_agent(req, need_key, t), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::config; }));
  }

  SECTION("the credential travels as a bearer token") {
    AgentEndpointConfig need_key = cfg;
    need_key.api_key_env = "ROUTELENS_TEST_KEY";
    setenv("ROUTELENS_TEST_KEY", "sk-123", 1);
    std::string seen_key;
    Transport t = [&](const TransportRequest& tr) {
      seen_key = tr.api_key;
      return TransportResult{true, 200, ok_body("1"), ""};
    };
    CHECK(query_agent(req, need_key, t) == "1");
    CHECK(seen_key == "sk-123");
    unsetenv("ROUTELENS_TEST_KEY");
  }
}

TEST_CASE("query_agent over a real local http server") {
  httplib::Server server;
  server.Post("/v1/chat/completions", [](const httplib::Request& hreq, httplib::Response& res) {
    auto body = nlohmann::json::parse(hreq.body);
    nlohmann::json j;
    j["choices"] = nlohmann::json::array(
        {{{"message",
           {{"role", "assistant"},
            {"content", std::string("got ") + body["model"].get<std::string>()}}}}});
    res.set_content(j.dump(), "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  AgentEndpointConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
  cfg.model = "router-2";
  cfg.api_key_env = "";
  AgentRequest req{"ping"};
  CHECK(query_agent(req, cfg) == "got router-2");

  server.stop();
  worker.join();
}

TEST_CASE("simulators") {
  Zoo zoo = bundled();
  KeyCompiler kc;

  SECTION("oracle emits the exact completeness mask") {
    const Endpoint& cur = zoo.by_id(11);  // GPT-4
    SimulatorSpec spec;
    spec.behavior = SimBehavior::oracle;
    std::string reply = simulate_agent(zoo, &cur, "I want a model with cheaper output prices.",
                                       spec, kc);
    OutputMask mask = process_mask(reply, zoo.size());
    CHECK_FALSE(mask.fail_flag);
    int j = zoo.attribute_index("Output Price");
    std::vector<int> target;
    for (int m = 0; m < zoo.size(); ++m) {
      const auto& v = zoo.value(m, j);
      target.push_back((!v.missing() && *v.number < 60.0) ? 1 : 0);
    }
    CHECK(mask.bits == target);
    auto cp = coverage_precision(mask, target);
    CHECK(cp.coverage == 1.0);
    REQUIRE(cp.precision);
    CHECK(*cp.precision == 1.0);
  }

  SECTION("oracle under no feedback recommends everything") {
    SimulatorSpec spec;
    spec.behavior = SimBehavior::oracle;
    std::string reply = simulate_agent(zoo, nullptr, "NONE", spec, kc);
    OutputMask mask = process_mask(reply, zoo.size());
    CHECK(classify(mask).label == Outcome::all);
  }

  SECTION("oracle on an unrecognized key emits a malformed reply") {
    SimulatorSpec spec;
    spec.behavior = SimBehavior::oracle;
    std::string reply = simulate_agent(zoo, nullptr, "make it sparkle", spec, kc);
    OutputMask mask = process_mask(reply, zoo.size());
    CHECK(mask.fail_flag);
    CHECK(classify(mask).label == Outcome::zero);
  }

  SECTION("oracle needs a current endpoint for relative keys") {
    SimulatorSpec spec;
    spec.behavior = SimBehavior::oracle;
    CHECK_THROWS_AS(simulate_agent(zoo, nullptr, "I want a cheaper model.", spec, kc), Error);
  }

  SECTION("prior with zero weights and a huge intercept is all-ones") {
    SimulatorSpec spec;
    spec.behavior = SimBehavior::prior;
    spec.intercept = 40.0;  // sigmoid clamps to exactly 1
    spec.seed = 7;
    std::string reply = simulate_agent(zoo, nullptr, "NONE", spec, kc);
    OutputMask mask = process_mask(reply, zoo.size());
    CHECK(classify(mask).label == Outcome::all);
  }

  SECTION("zero-noise noisy equals oracle") {
    const Endpoint& cur = zoo.by_id(11);
    SimulatorSpec oracle;
    oracle.behavior = SimBehavior::oracle;
    SimulatorSpec noisy;
    noisy.behavior = SimBehavior::noisy;
    noisy.flip_probability = 0.0;
    noisy.seed = 9;
    const char* key = "I want a model with cheaper cached input.";
    CHECK(simulate_agent(zoo, &cur, key, oracle, kc) == simulate_agent(zoo, &cur, key, noisy, kc));
  }
}

TEST_CASE("run store round-trip") {
  Zoo zoo = bundled();
  KeyCompiler kc;
  auto path = temp_file("routelens_store_test.jsonl");
  std::filesystem::remove(path);

  std::vector<RunRecord> records;
  detail::Rng rng(777);
  for (int i = 0; i < 218; ++i) {
    SimulatorSpec spec;
    spec.behavior = SimBehavior::prior;
    spec.intercept = -0.3;
    spec.seed = detail::derive_seed(42, (std::uint64_t)i);
    RunRecord r;
    r.run_id = make_run_id("NONE", i, 42);
    r.prompt = "p";
    r.direction_key = "NONE";
    r.raw_reply = simulate_agent(zoo, nullptr, "NONE", spec, kc);
    r.mask = process_mask(r.raw_reply, zoo.size());
    r.postcondition = classify(r.mask);
    r.timestamp = "-";
    r.agent_tag = "prior";
    records.push_back(std::move(r));
  }
  store_runs(path.string(), records);

  LoadedRuns loaded = load_runs(path.string(), zoo);
  CHECK(loaded.integrity_flagged.empty());
  REQUIRE(loaded.records.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(loaded.records[i].run_id == records[i].run_id);
    CHECK(loaded.records[i].direction_key == records[i].direction_key);
    CHECK(loaded.records[i].raw_reply == records[i].raw_reply);
    CHECK(loaded.records[i].mask.bits == records[i].mask.bits);
    CHECK(loaded.records[i].mask.fail_flag == records[i].mask.fail_flag);
    CHECK(loaded.records[i].postcondition.label == records[i].postcondition.label);
    CHECK_FALSE(loaded.records[i].current_endpoint_id.has_value());
  }

  SECTION("empty store loads as an empty list") {
    auto empty = temp_file("routelens_store_empty.jsonl");
    std::ofstream(empty.string()).close();
    LoadedRuns none = load_runs(empty.string(), zoo);
    CHECK(none.records.empty());
    std::filesystem::remove(empty);
  }

  SECTION("a tampered mask is flagged and renormalized") {
    std::ifstream in(path.string());
    std::string first;
    std::getline(in, first);
    auto j = nlohmann::json::parse(first);
    std::string bits = j["mask"];
    bits[0] = bits[0] == '1' ? '0' : '1';
    j["mask"] = bits;
    auto tampered = temp_file("routelens_store_tampered.jsonl");
    std::ofstream out(tampered.string());
    out << j.dump() << '\n';
    out.close();
    LoadedRuns flagged = load_runs(tampered.string(), zoo);
    REQUIRE(flagged.records.size() == 1);
    REQUIRE(flagged.integrity_flagged.size() == 1);
    CHECK(flagged.integrity_flagged[0] == flagged.records[0].run_id);
    CHECK(flagged.records[0].mask.bits == records[0].mask.bits);  // recomputed wins
    std::filesystem::remove(tampered);
  }

  SECTION("a mask length mismatch is a batch-integrity error") {
    auto bad = temp_file("routelens_store_badlen.jsonl");
    nlohmann::json j = record_to_json(records[0]);
    j["mask"] = "101";
    std::ofstream out(bad.string());
    out << j.dump() << '\n';
    out.close();
    CHECK_THROWS_MATCHES(load_runs(bad.string(), zoo), Error,
                         Catch::Matchers::Predicate<Error>(
                             [](const Error& e) { return e.code() == Errc::integrity; }));
    std::filesystem::remove(bad);
  }

  SECTION("a malformed line is an addressed parse error") {
    auto bad = temp_file("routelens_store_garbled.jsonl");
    std::ofstream out(bad.string());
    out << "{not json\n";
    out.close();
    try {
      load_runs(bad.string(), zoo);
      FAIL("expected parse error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::parse);
      CHECK(std::string(e.what()).find("line 1") != std::string::npos);
    }
    std::filesystem::remove(bad);
  }

  std::filesystem::remove(path);
}

TEST_CASE("replay sufficiency: the prior pipeline runs from records alone") {
  Zoo zoo = bundled();
  KeyCompiler kc;
  PredicateLibrary lib = build_library(zoo);

  // Record a prior-behaved agent, then fit from the store with no transport.
  std::vector<RunRecord> records;
  std::vector<double> w((std::size_t)lib.predicate_count(), 0.0);
  w[(std::size_t)lib.predicate_index("reasoning_enabled")] = 1.4;
  for (int i = 0; i < 80; ++i) {
    SimulatorSpec spec;
    spec.behavior = SimBehavior::prior;
    spec.weights = w;
    spec.intercept = -1.2;
    spec.seed = detail::derive_seed(5, (std::uint64_t)i);
    RunRecord r;
    r.run_id = make_run_id("NONE", i, 5);
    r.direction_key = "NONE";
    r.raw_reply = simulate_agent(zoo, nullptr, "NONE", spec, kc);
    r.mask = process_mask(r.raw_reply, zoo.size());
    r.postcondition = classify(r.mask);
    records.push_back(std::move(r));
  }
  RunMatrix rm = run_matrix_from_records(records, zoo.size());
  REQUIRE(rm.run_count() >= 10);
  auto sel = select_model(rm, lib, {0.05, 0.5, 5.0});
  double auc = pair_auc(sel.model, rm, lib);
  CHECK(auc > 0.6);
}
