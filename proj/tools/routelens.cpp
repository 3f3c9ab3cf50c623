// Command-line front end: batch experiments against a live or simulated
// router, report generation, implicit-prior fitting, significance testing,
// one-shot solving and an interactive REPL.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "routelens/cli.hpp"
#include "routelens/http_agent.hpp"

namespace {

std::vector<double> parse_grid(const std::string& csv) {
  std::vector<double> grid;
  for (const auto& tok : routelens::detail::split(csv, ',')) {
    auto v = routelens::detail::parse_number(tok, false);
    if (!v || *v <= 0) routelens::raise(routelens::Errc::config, "bad grid value '" + tok + "'");
    grid.push_back(*v);
  }
  return grid;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace routelens;

  CLI::App app{"constraint-based router audit harness"};
  app.require_subcommand(1);

  std::string zoo_path = "data/model_zoo.csv";
  std::string config_path;
  app.add_option("--zoo", zoo_path, "zoo CSV path")->capture_default_str();
  app.add_option("--config", config_path, "direction-key compiler config");

  // run-batch
  auto* batch = app.add_subcommand("run-batch", "record agent interactions into a run store");
  cli::BatchOptions bopt;
  std::string agent_kind = "oracle";
  std::string grid_csv;
  std::vector<std::string> weight_args;
  int current_id = 0;
  batch->add_option("--keys", bopt.keys_path, "keys file (key per line, optional count<TAB>key)")
      ->required();
  batch->add_option("--out", bopt.out_path, "run store path")->required();
  batch->add_option("--count", bopt.count_per_key, "default runs per key")
      ->capture_default_str();
  batch->add_option("--agent", agent_kind, "oracle | prior | noisy | live")
      ->capture_default_str();
  batch->add_option("--seed", bopt.seed, "batch seed")->capture_default_str();
  batch->add_option("--current", current_id, "current endpoint id (0 = none)");
  batch->add_option("--prompt", bopt.prompt, "free-form user prompt")->capture_default_str();
  batch->add_option("--template", bopt.template_path, "prompt template override");
  batch->add_option("--flip", bopt.agent.flip_probability, "noisy: per-bit flip probability");
  batch->add_option("--intercept", bopt.agent.intercept, "prior: intercept b");
  batch->add_option("--weight", weight_args, "prior: predicate=weight (repeatable)");
  batch->add_option("--base-url", bopt.agent.live.base_url, "live: endpoint base URL");
  batch->add_option("--path", bopt.agent.live.path, "live: endpoint path")
      ->capture_default_str();
  batch->add_option("--model", bopt.agent.live.model, "live: model identifier");
  batch->add_option("--api-key-env", bopt.agent.live.api_key_env,
                    "live: environment variable holding the credential")
      ->capture_default_str();
  batch->add_option("--temperature", [&bopt](const std::vector<std::string>& vals) {
    bopt.agent.live.temperature = std::stod(vals[0]);
    return true;
  }, "live: sampling temperature pass-through");
  batch->add_option("--timeout", bopt.agent.live.timeout_seconds, "live: request timeout (s)")
      ->capture_default_str();
  batch->add_option("--retries", bopt.agent.live.max_retries, "live: retry cap")
      ->capture_default_str();

  // report
  auto* rep = app.add_subcommand("report", "emit the report tables from a run store");
  cli::ReportOptions ropt;
  rep->add_option("--store", ropt.store_path, "run store path")->required();
  rep->add_option("--out-dir", ropt.out_dir, "output directory")->required();
  std::string rep_grid;
  rep->add_option("--grid", rep_grid, "regularization grid (comma separated)");
  rep->add_option("--folds", ropt.folds, "CV folds")->capture_default_str();
  rep->add_option("--topk", ropt.topk, "top-k for recovery diagnostics")->capture_default_str();

  // fit-prior
  auto* fit = app.add_subcommand("fit-prior", "fit implicit clause weights on Case S runs");
  cli::FitPriorOptions fopt;
  fit->add_option("--store", fopt.store_path, "run store path")->required();
  fit->add_option("--out", fopt.out_path, "report output path")->required();
  std::string fit_grid;
  fit->add_option("--grid", fit_grid, "regularization grid (comma separated)");
  fit->add_option("--n-perm", fopt.n_perm, "permutation trials")->capture_default_str();
  fit->add_option("--seed", fopt.seed, "permutation seed")->capture_default_str();
  fit->add_option("--folds", fopt.folds, "CV folds")->capture_default_str();
  fit->add_option("--topk", fopt.topk, "top-k for recovery diagnostics")->capture_default_str();
  fit->add_option("--threads", fopt.threads, "worker threads (0 = auto)")->capture_default_str();

  // permtest
  auto* pt = app.add_subcommand("permtest", "set-size-preserving permutation significance test");
  cli::PermTestOptions popt;
  pt->add_option("--store", popt.store_path, "run store path")->required();
  pt->add_option("--out", popt.out_path, "optional output path");
  std::string pt_grid;
  pt->add_option("--grid", pt_grid, "regularization grid (comma separated)");
  pt->add_option("--n-perm", popt.n_perm, "permutation trials")->capture_default_str();
  pt->add_option("--seed", popt.seed, "permutation seed")->capture_default_str();
  pt->add_option("--folds", popt.folds, "CV folds")->capture_default_str();
  pt->add_option("--topk", popt.topk, "top-k for recovery diagnostics")->capture_default_str();
  pt->add_option("--threads", popt.threads, "worker threads (0 = auto)")->capture_default_str();

  // solve
  auto* sv = app.add_subcommand("solve", "compile a key and solve the selection instance");
  cli::SolveOptions sopt;
  std::string mode_name = "shortlist";
  sv->add_option("--key", sopt.key, "direction key")->required();
  sv->add_option("--current", sopt.current_id, "current endpoint id")->required();
  sv->add_option("--mode", mode_name, "shortlist | completeness")->capture_default_str();
  sv->add_flag("--dump-instance", sopt.dump, "print the instance dump before solving");

  // repl
  auto* rp = app.add_subcommand("repl", "interactive direction-key session");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*batch) {
      bopt.zoo_path = zoo_path;
      bopt.config_path = config_path;
      if (current_id > 0) bopt.current_id = current_id;
      if (agent_kind == "oracle")
        bopt.agent.kind = cli::AgentMode::Kind::oracle;
      else if (agent_kind == "prior")
        bopt.agent.kind = cli::AgentMode::Kind::prior;
      else if (agent_kind == "noisy")
        bopt.agent.kind = cli::AgentMode::Kind::noisy;
      else if (agent_kind == "live")
        bopt.agent.kind = cli::AgentMode::Kind::live;
      else
        raise(Errc::config, "unknown agent kind '" + agent_kind + "'");
      for (const auto& arg : weight_args) {
        auto eq = arg.find('=');
        if (eq == std::string::npos) raise(Errc::config, "--weight needs predicate=value");
        auto v = detail::parse_number(arg.substr(eq + 1), false);
        if (!v) raise(Errc::config, "--weight needs a numeric value in '" + arg + "'");
        bopt.agent.prior_weights.emplace_back(arg.substr(0, eq), *v);
      }
      if (bopt.agent.kind == cli::AgentMode::Kind::live) bopt.agent.transport = http_transport();
      return cli::cmd_run_batch(bopt, std::cout);
    }
    if (*rep) {
      ropt.zoo_path = zoo_path;
      ropt.config_path = config_path;
      if (!rep_grid.empty()) ropt.grid = parse_grid(rep_grid);
      return cli::cmd_report(ropt, std::cout);
    }
    if (*fit) {
      fopt.zoo_path = zoo_path;
      if (!fit_grid.empty()) fopt.grid = parse_grid(fit_grid);
      return cli::cmd_fit_prior(fopt, std::cout);
    }
    if (*pt) {
      popt.zoo_path = zoo_path;
      if (!pt_grid.empty()) popt.grid = parse_grid(pt_grid);
      return cli::cmd_permtest(popt, std::cout);
    }
    if (*sv) {
      sopt.zoo_path = zoo_path;
      sopt.config_path = config_path;
      if (mode_name == "completeness")
        sopt.mode = SolveMode::completeness;
      else if (mode_name != "shortlist")
        raise(Errc::config, "mode must be shortlist or completeness");
      return cli::cmd_solve(sopt, std::cout);
    }
    if (*rp) {
      Zoo zoo = load_zoo_file(zoo_path);
      KeyCompiler compiler = cli::load_compiler(config_path);
      return cli::repl(std::cin, std::cout, zoo, compiler);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
