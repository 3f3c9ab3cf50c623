#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <json.hpp>

#include "routelens/detail/rng.hpp"
#include "routelens/dirkey.hpp"
#include "routelens/errors.hpp"
#include "routelens/postcond.hpp"
#include "routelens/prior.hpp"
#include "routelens/solver.hpp"
#include "routelens/zoo.hpp"

namespace routelens {

/// One recorded routing interaction. Append-only; the stored mask must equal
/// process_mask(raw_reply, M) for the zoo the batch was recorded against.
struct RunRecord {
  std::string run_id;
  std::string prompt;
  std::string direction_key;
  std::optional<int> current_endpoint_id;  // 1-based, none for the first turn
  std::string raw_reply;
  OutputMask mask;
  Postcondition postcondition;
  std::string timestamp;  // "-" for simulated runs
  std::string agent_tag;
};

struct AgentRequest {
  std::string rendered_prompt;
};

inline const char* default_prompt_template() {
  return
      "IMPORTANT: Your role is to choose which language models align with the user's "
      "preferences and DIRECTION.\n"
      "\n"
      "You will receive:\n"
      "- A free-form prompt that may contain a line 'DIRECTION: ...' describing the user's "
      "current preference direction (e.g. wanting a cheaper model).\n"
      "- Metadata for the last chosen model, so you can compare (e.g. find models that are "
      "cheaper, faster, etc.).\n"
      "- A CSV table of all available models.\n"
      "\n"
      "There are [N] models (rows) in the CSV, in fixed order.\n"
      "\n"
      "Your only task:\n"
      "1) For each model (each row), decide if it matches the user's preferences and "
      "DIRECTION, possibly relative to the last chosen model.\n"
      "2) Output exactly [N] integers (space-separated), one per row in the CSV, in the same "
      "order. Use '1' if the model is acceptable, '0' if it is not.\n"
      "3) Output no other words.\n"
      "\n"
      "Last chosen model (CSV; may be '(none yet'):\n"
      "[Last Model Metadata]\n"
      "\n"
      "CSV of ALL models:\n"
      "[Full Model Zoo CSV]\n";
}

namespace detail {

inline void replace_all(std::string& text, std::string_view needle, std::string_view value) {
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    text.replace(pos, needle.size(), value);
    pos += value.size();
  }
}

}  // namespace detail

/// Fills the prompt template: [N] = pool size, [Last Model Metadata] = the
/// current endpoint's agent-view CSV row (or "(none yet)"), [Full Model Zoo
/// CSV] = render_for_agent. The user prompt and DIRECTION line follow the
/// template. Byte-stable for fixed inputs.
inline AgentRequest render_prompt(const Zoo& zoo, const Endpoint* current, std::string_view prompt,
                                  std::string_view direction_key,
                                  std::string_view template_text = default_prompt_template()) {
  std::string text(template_text);
  detail::replace_all(text, "[N]", std::to_string(zoo.size()));
  detail::replace_all(text, "[Last Model Metadata]",
                      current ? render_endpoint_row(zoo, *current) : "(none yet)");
  detail::replace_all(text, "[Full Model Zoo CSV]", render_for_agent(zoo));
  std::ostringstream out;
  out << text << "\nUser prompt:\n" << prompt << "\nDIRECTION: " << direction_key << '\n';
  return AgentRequest{out.str()};
}

/// Connection settings for a chat-completion-style endpoint. The credential
/// is read from the named environment variable, never stored in files.
struct AgentEndpointConfig {
  std::string base_url;
  std::string path = "/v1/chat/completions";
  std::string model;
  std::string api_key_env = "ROUTELENS_API_KEY";
  std::optional<double> temperature;  // pass-through; no default asserted
  std::optional<int> max_tokens;
  int timeout_seconds = 60;
  int max_retries = 3;
  int backoff_ms = 250;
};

struct TransportRequest {
  std::string base_url;
  std::string path;
  std::string body;     // JSON chat-completion payload
  std::string api_key;  // empty = no auth header
  int timeout_seconds = 60;
};

struct TransportResult {
  bool transport_ok = false;  // false = network/timeout failure
  int status = 0;
  std::string body;
  std::string error;
};

using Transport = std::function<TransportResult(const TransportRequest&)>;

/// Sends the rendered prompt over a chat-completion interface and returns the
/// reply text verbatim. Transient failures (transport errors, 429, 5xx) are
/// retried up to the configured cap with exponential backoff.
inline std::string query_agent(const AgentRequest& req, const AgentEndpointConfig& cfg,
                               const Transport& transport) {
  if (!transport) raise(Errc::config, "no transport configured");
  if (cfg.base_url.empty()) raise(Errc::config, "agent base_url is empty");

  TransportRequest tr;
  tr.base_url = cfg.base_url;
  tr.path = cfg.path;
  tr.timeout_seconds = cfg.timeout_seconds;
  if (!cfg.api_key_env.empty()) {
    const char* key = std::getenv(cfg.api_key_env.c_str());
    if (!key || !*key)
      raise(Errc::config, "credential environment variable " + cfg.api_key_env + " is not set");
    tr.api_key = key;
  }

  nlohmann::json body;
  body["model"] = cfg.model;
  body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", req.rendered_prompt}}});
  if (cfg.temperature) body["temperature"] = *cfg.temperature;
  if (cfg.max_tokens) body["max_tokens"] = *cfg.max_tokens;
  tr.body = body.dump();

  std::string last_error;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    if (attempt > 0) {
      auto delay = std::chrono::milliseconds(cfg.backoff_ms << (attempt - 1));
      std::this_thread::sleep_for(delay);
    }
    TransportResult res = transport(tr);
    if (!res.transport_ok) {
      last_error = res.error.empty() ? "transport failure" : res.error;
      continue;
    }
    bool transient = res.status == 429 || res.status >= 500;
    if (transient) {
      last_error = "status " + std::to_string(res.status);
      continue;
    }
    if (res.status < 200 || res.status >= 300)
      raise(Errc::status, "agent returned status " + std::to_string(res.status) + ": " +
                              res.body.substr(0, 200));
    try {
      auto parsed = nlohmann::json::parse(res.body);
      return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      raise(Errc::status, std::string("malformed agent response: ") + e.what() + "; body: " +
                              res.body.substr(0, 200));
    }
  }
  raise(Errc::transport, "agent unreachable after " + std::to_string(cfg.max_retries + 1) +
                             " attempts: " + last_error);
}

enum class SimBehavior { oracle, prior, noisy };

/// Local stand-in for the black-box router.
///   oracle: compile + solve in completeness mode, print the exact mask.
///   prior:  sample each bit from sigmoid(intercept + psi . weights).
///   noisy:  oracle bits with each flipped at flip_probability.
struct SimulatorSpec {
  SimBehavior behavior = SimBehavior::oracle;
  std::vector<double> weights;  // prior: length J (empty = all zero)
  double intercept = 0.0;
  double flip_probability = 0.0;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::string render_bits(const std::vector<int>& bits) {
  std::ostringstream out;
  for (std::size_t m = 0; m < bits.size(); ++m) {
    if (m) out << ' ';
    out << (bits[m] ? 1 : 0);
  }
  return out.str();
}

}  // namespace detail

inline std::string simulate_agent(const Zoo& zoo, const Endpoint* current, std::string_view key,
                                  const SimulatorSpec& spec,
                                  const KeyCompiler& compiler = KeyCompiler()) {
  if (spec.behavior == SimBehavior::prior) {
    auto lib = build_library(zoo);
    std::vector<double> w = spec.weights;
    if (w.empty()) w.assign(static_cast<std::size_t>(lib.predicate_count()), 0.0);
    if (static_cast<int>(w.size()) != lib.predicate_count())
      raise(Errc::config, "prior simulator weight vector length mismatch");
    PriorModel model;
    model.intercept = spec.intercept;
    model.weights = std::move(w);
    auto scores = detail::predicted_probabilities(model, lib);
    detail::Rng rng(spec.seed);
    std::vector<int> bits(static_cast<std::size_t>(zoo.size()), 0);
    for (std::size_t m = 0; m < bits.size(); ++m) bits[m] = rng.bernoulli(scores[m]) ? 1 : 0;
    return detail::render_bits(bits);
  }

  DirectionKey parsed = compiler.classify(key);
  if (parsed.kind == KeyKind::unrecognized)
    return "no recommendation: the direction could not be interpreted";

  ConstraintSet cs = compiler.compile(parsed, zoo, SolveMode::completeness);
  bool needs_current = false;
  for (const auto& p : cs.hard) needs_current = needs_current || p.binary();
  for (const auto& wp : cs.soft) needs_current = needs_current || wp.predicate.binary();
  if (needs_current && !current)
    raise(Errc::config, "oracle simulation of a relative key needs a current endpoint");

  const Endpoint& cur = current ? *current : zoo.endpoints.front();
  Selection sel = solve(build_instance(cs, zoo, cur));
  std::vector<int> bits = sel.chosen;
  if (spec.behavior == SimBehavior::noisy && spec.flip_probability > 0.0) {
    detail::Rng rng(spec.seed);
    for (auto& b : bits)
      if (rng.bernoulli(spec.flip_probability)) b = 1 - b;
  }
  return detail::render_bits(bits);
}

// ---- run store: one JSON object per line, UTF-8 ----

inline nlohmann::json record_to_json(const RunRecord& r) {
  nlohmann::json j;
  j["run_id"] = r.run_id;
  j["prompt"] = r.prompt;
  j["direction_key"] = r.direction_key;
  if (r.current_endpoint_id)
    j["current_endpoint_id"] = *r.current_endpoint_id;
  else
    j["current_endpoint_id"] = nullptr;
  j["raw_reply"] = r.raw_reply;
  std::string bits;
  for (int b : r.mask.bits) bits += b ? '1' : '0';
  j["mask"] = bits;
  j["fail_flag"] = r.mask.fail_flag;
  j["source_token_count"] = r.mask.source_token_count;
  j["postcondition"] = outcome_name(r.postcondition.label);
  j["timestamp"] = r.timestamp;
  j["agent_tag"] = r.agent_tag;
  return j;
}

inline void store_runs(const std::string& path, const std::vector<RunRecord>& records) {
  std::ofstream out(path);
  if (!out) raise(Errc::config, "cannot write run store '" + path + "'");
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

struct LoadedRuns {
  std::vector<RunRecord> records;
  std::vector<std::string> integrity_flagged;  // run_ids whose stored mask mismatched
};

/// Reads a run store, re-normalizes every mask from its raw reply, and flags
/// records whose stored mask disagrees (the recomputed mask wins). A mask
/// whose length does not match the zoo is a batch-integrity error.
inline LoadedRuns load_runs(const std::string& path, const Zoo& zoo) {
  std::ifstream in(path);
  if (!in) raise(Errc::config, "cannot open run store '" + path + "'");
  LoadedRuns out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      raise(Errc::parse, "run store line " + std::to_string(lineno) + ": " + e.what());
    }
    RunRecord r;
    try {
      r.run_id = j.at("run_id").get<std::string>();
      r.prompt = j.value("prompt", "");
      r.direction_key = j.at("direction_key").get<std::string>();
      if (j.contains("current_endpoint_id") && !j["current_endpoint_id"].is_null())
        r.current_endpoint_id = j["current_endpoint_id"].get<int>();
      r.raw_reply = j.at("raw_reply").get<std::string>();
      r.timestamp = j.value("timestamp", "-");
      r.agent_tag = j.value("agent_tag", "");
      std::string bits = j.at("mask").get<std::string>();
      if (static_cast<int>(bits.size()) != zoo.size())
        raise(Errc::integrity, "run store line " + std::to_string(lineno) + ": mask length " +
                                   std::to_string(bits.size()) + " does not match zoo M=" +
                                   std::to_string(zoo.size()));
      OutputMask recomputed = process_mask(r.raw_reply, zoo.size());
      std::string recomputed_bits;
      for (int b : recomputed.bits) recomputed_bits += b ? '1' : '0';
      bool stored_fail = j.value("fail_flag", recomputed.fail_flag);
      if (recomputed_bits != bits || stored_fail != recomputed.fail_flag)
        out.integrity_flagged.push_back(r.run_id);
      r.mask = recomputed;
      r.postcondition = classify(r.mask);
    } catch (const nlohmann::json::exception& e) {
      raise(Errc::parse, "run store line " + std::to_string(lineno) + ": " + e.what());
    }
    out.records.push_back(std::move(r));
  }
  return out;
}

/// Content-hash run id (FNV-1a over key, index and seed) for resumable batches.
inline std::string make_run_id(std::string_view key, int index, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](std::string_view s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
  };
  mix(key);
  mix("\x1f");
  mix(std::to_string(index));
  mix("\x1f");
  mix(std::to_string(seed));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string utc_timestamp() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace routelens
