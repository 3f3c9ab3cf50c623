#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "routelens/agentio.hpp"
#include "routelens/report.hpp"

namespace routelens::cli {

inline int exit_code_for(const Error& e) {
  switch (e.code()) {
    case Errc::transport:
    case Errc::status:
      return 3;
    case Errc::config:
    case Errc::compile:
      return 1;
    default:
      return 2;
  }
}

inline KeyCompiler load_compiler(const std::string& config_path) {
  if (config_path.empty()) return KeyCompiler();
  std::ifstream in(config_path);
  if (!in) raise(Errc::config, "cannot open compiler config '" + config_path + "'");
  return KeyCompiler(CompilerConfig::parse(in));
}

inline std::string load_template(const std::string& template_path) {
  if (template_path.empty()) return default_prompt_template();
  std::ifstream in(template_path);
  if (!in) raise(Errc::config, "cannot open prompt template '" + template_path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

/// Key list file: one direction key per line, optionally "count<TAB>key".
/// '#' starts a comment.
struct KeyRequest {
  std::string key;
  int count = 1;
};

inline std::vector<KeyRequest> parse_keys_file(const std::string& path, int default_count) {
  std::ifstream in(path);
  if (!in) raise(Errc::config, "cannot open keys file '" + path + "'");
  std::vector<KeyRequest> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line[0] == '#') continue;
    if (detail::trim(line).empty()) continue;
    KeyRequest req;
    auto tab = line.find('\t');
    if (tab != std::string::npos) {
      auto n = detail::parse_number(line.substr(0, tab), false);
      if (!n || *n < 0 || *n != std::floor(*n))
        raise(Errc::config, "keys file line " + std::to_string(lineno) +
                                ": count before TAB must be a nonnegative integer");
      req.count = static_cast<int>(*n);
      req.key = line.substr(tab + 1);
    } else {
      req.count = default_count;
      req.key = line;
    }
    out.push_back(std::move(req));
  }
  return out;
}

struct AgentMode {
  enum class Kind { oracle, prior, noisy, live } kind = Kind::oracle;
  double flip_probability = 0.0;                 // noisy
  double intercept = 0.0;                        // prior
  std::vector<std::pair<std::string, double>> prior_weights;  // prior: name=value
  AgentEndpointConfig live;
  Transport transport;  // live transport; injectable for tests
};

struct BatchOptions {
  std::string zoo_path;
  std::string config_path;
  std::string template_path;
  std::string keys_path;
  std::string out_path;
  std::string prompt = "Please recommend models for my workload.";
  int count_per_key = 1;
  std::optional<int> current_id;
  std::uint64_t seed = 0;
  AgentMode agent;
};

namespace detail_cli {

inline std::uint64_t fnv64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace detail_cli

/// Executes count-per-key interactions and appends them to the run store.
/// Run ids hash (key, index, seed), so rerunning a partially completed batch
/// skips what already exists. Transport failures abort with a partial-store
/// notice; everything recorded so far stays on disk.
inline int cmd_run_batch(const BatchOptions& opts, std::ostream& log) {
  Zoo zoo = load_zoo_file(opts.zoo_path);
  KeyCompiler compiler = load_compiler(opts.config_path);
  std::string template_text = load_template(opts.template_path);
  auto keys = parse_keys_file(opts.keys_path, opts.count_per_key);

  std::set<std::string> existing;
  if (std::filesystem::exists(opts.out_path)) {
    auto loaded = load_runs(opts.out_path, zoo);
    for (const auto& r : loaded.records) existing.insert(r.run_id);
  }

  const Endpoint* current = nullptr;
  if (opts.current_id) current = &zoo.by_id(*opts.current_id);

  std::vector<double> prior_w;
  if (opts.agent.kind == AgentMode::Kind::prior) {
    auto lib = build_library(zoo);
    prior_w.assign(static_cast<std::size_t>(lib.predicate_count()), 0.0);
    for (const auto& [name, value] : opts.agent.prior_weights) {
      int j = lib.predicate_index(name);
      if (j < 0) raise(Errc::config, "unknown predicate in --weight: '" + name + "'");
      prior_w[static_cast<std::size_t>(j)] = value;
    }
  }

  std::ofstream out(opts.out_path, std::ios::app);
  if (!out) raise(Errc::config, "cannot write run store '" + opts.out_path + "'");

  int written = 0, skipped = 0;
  for (const auto& req : keys) {
    for (int index = 0; index < req.count; ++index) {
      std::string run_id = make_run_id(req.key, index, opts.seed);
      if (existing.count(run_id)) {
        ++skipped;
        continue;
      }
      RunRecord rec;
      rec.run_id = run_id;
      rec.prompt = opts.prompt;
      rec.direction_key = req.key;
      rec.current_endpoint_id = opts.current_id;
      try {
        if (opts.agent.kind == AgentMode::Kind::live) {
          AgentRequest areq =
              render_prompt(zoo, current, opts.prompt, req.key, template_text);
          Transport transport = opts.agent.transport;
          rec.raw_reply = query_agent(areq, opts.agent.live, transport);
          rec.timestamp = utc_timestamp();
          rec.agent_tag = opts.agent.live.model;
        } else {
          SimulatorSpec sim;
          sim.seed = routelens::detail::derive_seed(opts.seed, detail_cli::fnv64(run_id));
          switch (opts.agent.kind) {
            case AgentMode::Kind::oracle:
              sim.behavior = SimBehavior::oracle;
              rec.agent_tag = "oracle";
              break;
            case AgentMode::Kind::noisy:
              sim.behavior = SimBehavior::noisy;
              sim.flip_probability = opts.agent.flip_probability;
              rec.agent_tag = "noisy";
              break;
            default:
              sim.behavior = SimBehavior::prior;
              sim.weights = prior_w;
              sim.intercept = opts.agent.intercept;
              rec.agent_tag = "prior";
              break;
          }
          rec.raw_reply = simulate_agent(zoo, current, req.key, sim, compiler);
          rec.timestamp = "-";
        }
      } catch (const Error& e) {
        if (e.code() == Errc::transport || e.code() == Errc::status) {
          log << "batch aborted (" << written << " new records kept in partial store "
              << opts.out_path << "): " << e.what() << '\n';
        }
        throw;
      }
      rec.mask = process_mask(rec.raw_reply, zoo.size());
      rec.postcondition = classify(rec.mask);
      out << record_to_json(rec).dump() << '\n';
      out.flush();
      ++written;
    }
  }
  log << "run store " << opts.out_path << ": " << written << " new, " << skipped
      << " already present\n";
  return 0;
}

struct ReportOptions {
  std::string store_path;
  std::string zoo_path;
  std::string config_path;
  std::string out_dir;
  std::vector<double> grid = {0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1, 2, 5, 10};
  int folds = 5;
  int topk = 8;
};

/// Emits every report table as a data file (no image rendering).
inline int cmd_report(const ReportOptions& opts, std::ostream& log) {
  Zoo zoo = load_zoo_file(opts.zoo_path);
  KeyCompiler compiler = load_compiler(opts.config_path);
  auto loaded = load_runs(opts.store_path, zoo);
  for (const auto& id : loaded.integrity_flagged)
    log << "integrity: stored mask for run " << id << " did not match its reply; renormalized\n";
  if (loaded.records.empty()) log << "notice: run store is empty, reports will carry no rows\n";

  std::filesystem::create_directories(opts.out_dir);
  auto write = [&](const std::string& name, const std::string& content) {
    std::filesystem::path p = std::filesystem::path(opts.out_dir) / name;
    std::ofstream f(p);
    if (!f) raise(Errc::config, "cannot write report file '" + p.string() + "'");
    f << content;
    log << "wrote " << p.string() << '\n';
  };

  write("outcome_table.csv", report::outcome_table_csv(loaded.records, compiler));
  write("coverage_precision.csv",
        report::coverage_precision_csv(loaded.records, zoo, compiler));
  write("selection_frequencies.csv",
        report::selection_frequency_csv(loaded.records, zoo, compiler));
  write("set_size_stats.csv", report::set_size_stats_csv(loaded.records, compiler));
  write("set_size_histogram.csv", report::set_size_histogram_csv(loaded.records, compiler));
  write("attribute_comparison.csv",
        report::attribute_comparison_csv(loaded.records, zoo, compiler));

  // Implicit-prior section without the permutation test (fit-prior runs it).
  RunMatrix rm = run_matrix_from_records(loaded.records, zoo.size());
  std::string prior_text;
  if (rm.run_count() >= std::max(2, opts.folds)) {
    auto lib = build_library(zoo);
    auto selection = select_model(rm, lib, opts.grid, opts.folds);
    selection.model.diagnostics.pair_auc = pair_auc(selection.model, rm, lib);
    selection.model.diagnostics.spearman = spearman_selection_rate(selection.model, rm, lib);
    selection.model.diagnostics.topk = topk_recovery(selection.model, rm, lib, opts.topk);
    selection.model.diagnostics.topk_k = opts.topk;
    prior_text = report::prior_report_text(selection, lib, rm);
  } else {
    std::ostringstream s;
    s << "implicit-prior report\n=====================\n"
      << "not fitted: " << rm.run_count() << " Case S runs, need at least "
      << std::max(2, opts.folds) << '\n';
    prior_text = s.str();
  }
  write("prior_report.txt", prior_text);
  return 0;
}

struct FitPriorOptions {
  std::string store_path;
  std::string zoo_path;
  std::string out_path;
  std::vector<double> grid = {0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1, 2, 5, 10};
  int n_perm = 199;
  std::uint64_t seed = 0;
  int folds = 5;
  int topk = 8;
  int threads = 0;
};

/// Full implicit-prior pipeline: Case S conditioning, library build, group-CV
/// model selection, ranking diagnostics and the set-size-preserving
/// permutation test. Writes the plain-text report.
inline int cmd_fit_prior(const FitPriorOptions& opts, std::ostream& log) {
  Zoo zoo = load_zoo_file(opts.zoo_path);
  auto loaded = load_runs(opts.store_path, zoo);
  RunMatrix rm = run_matrix_from_records(loaded.records, zoo.size());
  if (rm.run_count() == 0)
    raise(Errc::conditioning,
          "store has no Case S runs to condition on (All/Zero/One carry no relative signal)");

  auto lib = build_library(zoo);
  auto selection = select_model(rm, lib, opts.grid, opts.folds);
  selection.model.diagnostics.pair_auc = pair_auc(selection.model, rm, lib);
  selection.model.diagnostics.spearman = spearman_selection_rate(selection.model, rm, lib);
  selection.model.diagnostics.topk = topk_recovery(selection.model, rm, lib, opts.topk);
  selection.model.diagnostics.topk_k = opts.topk;

  PermutationResult perm = permutation_test(rm, lib, opts.grid, opts.n_perm, opts.seed,
                                            opts.folds, opts.topk, opts.threads);
  selection.model.diagnostics.p_auc = perm.p_auc;
  selection.model.diagnostics.p_topk = perm.p_topk;
  selection.model.diagnostics.p_spearman = perm.p_spearman;

  std::string text = report::prior_report_text(selection, lib, rm, &perm, opts.seed);
  std::ofstream out(opts.out_path);
  if (!out) raise(Errc::config, "cannot write prior report '" + opts.out_path + "'");
  out << text;
  log << text;
  return 0;
}

struct PermTestOptions {
  std::string store_path;
  std::string zoo_path;
  std::string out_path;
  std::vector<double> grid = {0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1, 2, 5, 10};
  int n_perm = 199;
  std::uint64_t seed = 0;
  int folds = 5;
  int topk = 8;
  int threads = 0;
};

inline int cmd_permtest(const PermTestOptions& opts, std::ostream& log) {
  Zoo zoo = load_zoo_file(opts.zoo_path);
  auto loaded = load_runs(opts.store_path, zoo);
  RunMatrix rm = run_matrix_from_records(loaded.records, zoo.size());
  if (rm.run_count() == 0) raise(Errc::conditioning, "store has no Case S runs");
  auto lib = build_library(zoo);
  PermutationResult perm = permutation_test(rm, lib, opts.grid, opts.n_perm, opts.seed,
                                            opts.folds, opts.topk, opts.threads);
  std::ostringstream text;
  text << "permutation test (n=" << perm.trials << ", seed=" << opts.seed << ")\n";
  text << "observed: auc=" << routelens::detail::fixed(perm.observed_auc, 4)
       << " top" << opts.topk << "=" << perm.observed_topk
       << " spearman=" << routelens::detail::fixed(perm.observed_spearman, 4) << '\n';
  text << "p-values: p_auc=" << routelens::detail::fixed(perm.p_auc, 4)
       << " p_topk=" << routelens::detail::fixed(perm.p_topk, 4)
       << " p_spearman=" << routelens::detail::fixed(perm.p_spearman, 4) << '\n';
  text << "null means: auc=" << routelens::detail::fixed(perm.null_auc_mean, 4)
       << " topk=" << routelens::detail::fixed(perm.null_topk_mean, 4)
       << " spearman=" << routelens::detail::fixed(perm.null_spearman_mean, 4) << '\n';
  if (!opts.out_path.empty()) {
    std::ofstream out(opts.out_path);
    if (!out) raise(Errc::config, "cannot write '" + opts.out_path + "'");
    out << text.str();
  }
  log << text.str();
  return 0;
}

struct SolveOptions {
  std::string zoo_path;
  std::string config_path;
  std::string key;
  int current_id = 1;
  SolveMode mode = SolveMode::shortlist;
  bool dump = false;
};

namespace detail_cli {

inline void print_selection(const Zoo& zoo, const ConstraintSet& cs, const Selection& sel,
                            std::ostream& out) {
  out << "constraints: " << cs.hard.size() << " hard, " << cs.soft.size() << " soft, budget ["
      << cs.budget_low << ", " << cs.budget_high << "], lambda "
      << routelens::detail::repr(cs.penalty) << ", mode " << solve_mode_name(cs.mode) << '\n';
  for (const auto& p : cs.hard) out << "  hard: " << p.name << '\n';
  for (const auto& wp : cs.soft)
    out << "  soft: " << wp.predicate.name << "  (w=" << routelens::detail::repr(wp.weight)
        << ")\n";
  if (!sel.feasible) {
    out << "infeasible: no endpoint satisfies every hard clause within the budget\n";
    return;
  }
  out << "chosen (" << sel.chosen_count() << " of " << zoo.size() << "), objective "
      << routelens::detail::fixed(sel.objective, 4) << ":\n";
  for (int m = 0; m < zoo.size(); ++m) {
    if (!sel.chosen[static_cast<std::size_t>(m)]) continue;
    const auto& e = zoo.endpoints[static_cast<std::size_t>(m)];
    out << "  " << e.id << "  " << e.model << "  (utility "
        << routelens::detail::fixed(sel.per_endpoint_utility[static_cast<std::size_t>(m)], 4)
        << ")\n";
  }
  OutputMask mask;
  mask.bits = sel.chosen;
  out << "postcondition: " << outcome_name(classify(mask).label) << '\n';
}

}  // namespace detail_cli

inline int cmd_solve(const SolveOptions& opts, std::ostream& out) {
  Zoo zoo = load_zoo_file(opts.zoo_path);
  KeyCompiler compiler = load_compiler(opts.config_path);
  DirectionKey key = compiler.classify(opts.key);
  out << "key: \"" << opts.key << "\" -> " << key_kind_name(key.kind) << '\n';
  ConstraintSet cs = compiler.compile(key, zoo, opts.mode);
  const Endpoint& current = zoo.by_id(opts.current_id);
  MaxSmtInstance inst = build_instance(cs, zoo, current);
  if (opts.dump) out << dump_instance(inst);
  Selection sel = solve(inst);
  detail_cli::print_selection(zoo, cs, sel, out);
  return 0;
}

/// Interactive session against the solver. State (current endpoint, mode,
/// last key) lives only for the session.
inline int repl(std::istream& in, std::ostream& out, const Zoo& zoo,
                const KeyCompiler& compiler) {
  std::optional<int> current_id;
  SolveMode mode = SolveMode::shortlist;
  std::optional<ConstraintSet> last_cs;

  out << "routelens repl; " << zoo.size()
      << " endpoints loaded. Type a direction key, or 'help'.\n";
  std::string line;
  while (out << "> " << std::flush, std::getline(in, line)) {
    std::string body(routelens::detail::trim(line));
    if (body.empty()) continue;
    if (body == "quit" || body == "exit") break;
    if (body == "help") {
      out << "commands:\n"
             "  current <id>   set the current endpoint (1.." << zoo.size() << ")\n"
             "  mode <shortlist|completeness>\n"
             "  explain        clause satisfaction per endpoint for the last key\n"
             "  quit\n"
             "anything else is treated as a direction key\n";
      continue;
    }
    if (body.rfind("current ", 0) == 0) {
      auto n = routelens::detail::parse_number(body.substr(8), false);
      if (!n || *n < 1 || *n > zoo.size() || *n != std::floor(*n)) {
        out << "current must be an endpoint id in 1.." << zoo.size() << '\n';
        continue;
      }
      current_id = static_cast<int>(*n);
      out << "current endpoint: " << *current_id << " ("
          << zoo.by_id(*current_id).model << ")\n";
      continue;
    }
    if (body.rfind("mode ", 0) == 0) {
      std::string m = body.substr(5);
      if (m == "shortlist")
        mode = SolveMode::shortlist;
      else if (m == "completeness")
        mode = SolveMode::completeness;
      else {
        out << "mode must be shortlist or completeness\n";
        continue;
      }
      out << "mode: " << solve_mode_name(mode) << '\n';
      continue;
    }
    if (body == "explain") {
      if (!last_cs) {
        out << "no compiled key yet\n";
        continue;
      }
      const Endpoint& cur = current_id ? zoo.by_id(*current_id) : zoo.endpoints.front();
      out << "clause satisfaction (rows = endpoints):\n";
      for (const auto& e : zoo.endpoints) {
        out << "  " << e.id << "  " << e.model << " :";
        for (const auto& p : last_cs->hard)
          out << "  [" << p.name << "]=" << eval_predicate(p, e, cur, zoo);
        for (const auto& wp : last_cs->soft)
          out << "  [" << wp.predicate.name
              << "]=" << eval_predicate(wp.predicate, e, cur, zoo);
        out << '\n';
      }
      continue;
    }

    DirectionKey key = compiler.classify(body);
    out << "key kind: " << key_kind_name(key.kind) << '\n';
    if (key.kind == KeyKind::unrecognized) {
      out << "unrecognized direction key. Accepted forms:\n"
          << compiler.config().accepted_forms() << '\n';
      continue;
    }
    if (key.kind == KeyKind::nf) {
      out << "no feedback: vacuous constraint set (0 hard, 0 soft); the neutral "
             "postconditions are ZERO or ALL\n";
    }
    ConstraintSet cs = compiler.compile(key, zoo, mode);
    bool needs_current = false;
    for (const auto& p : cs.hard) needs_current = needs_current || p.binary();
    for (const auto& wp : cs.soft) needs_current = needs_current || wp.predicate.binary();
    if (needs_current && !current_id) {
      out << "this key compares against the current endpoint; set one first (current <id>)\n";
      continue;
    }
    const Endpoint& cur = current_id ? zoo.by_id(*current_id) : zoo.endpoints.front();
    Selection sel = solve(build_instance(cs, zoo, cur));
    detail_cli::print_selection(zoo, cs, sel, out);
    last_cs = cs;
  }
  out << "bye\n";
  return 0;
}

}  // namespace routelens::cli
