#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "routelens/agentio.hpp"
#include "routelens/detail/strings.hpp"
#include "routelens/dirkey.hpp"
#include "routelens/postcond.hpp"
#include "routelens/prior.hpp"
#include "routelens/solver.hpp"
#include "routelens/zoo.hpp"

namespace routelens {

/// Inclusion matrix from recorded runs, keeping only the admitted
/// postcondition labels (Case S by default: All(C) carries no information
/// about relative preference, Zero/One too little).
inline RunMatrix run_matrix_from_records(const std::vector<RunRecord>& records, int endpoint_count,
                                         std::vector<Outcome> admitted = {Outcome::case_s}) {
  RunMatrix rm;
  rm.endpoint_count = endpoint_count;
  rm.admitted = admitted;
  for (const auto& r : records) {
    bool admit = false;
    for (Outcome o : admitted) admit = admit || r.postcondition.label == o;
    if (!admit) continue;
    rm.rows.push_back({r.run_id, r.mask.bits});
  }
  return rm;
}

namespace report {

inline std::string outcome_table_csv(const std::vector<RunRecord>& records,
                                     const KeyCompiler& compiler) {
  std::vector<std::pair<DirectionKey, Postcondition>> runs;
  runs.reserve(records.size());
  for (const auto& r : records)
    runs.emplace_back(compiler.classify(r.direction_key), r.postcondition);
  auto rows = tally_outcomes(runs);
  std::ostringstream out;
  out << "direction_key,zero_count,zero_pct,one_count,one_pct,case_s_count,case_s_pct,"
         "all_count,all_pct,total\n";
  for (const auto& row : rows) {
    out << row.key;
    for (Outcome o : {Outcome::zero, Outcome::one, Outcome::case_s, Outcome::all})
      out << ',' << row.counts[static_cast<std::size_t>(o)] << ','
          << detail::fixed(row.pct(o), 2);
    out << ',' << row.total << '\n';
  }
  return out.str();
}

/// Coverage/precision summary per key group (LF-PD, LF-GD). The target set of
/// a run is the compiled hard clause for precise keys and the configured
/// baseline attribute for general directions, both relative to the run's
/// current endpoint. Runs without a current endpoint or with an empty target
/// are skipped and counted.
inline std::string coverage_precision_csv(const std::vector<RunRecord>& records, const Zoo& zoo,
                                          const KeyCompiler& compiler) {
  struct Group {
    int runs = 0;
    int skipped = 0;             // no current endpoint or empty target
    int undefined_precision = 0; // empty output set
    double coverage_sum = 0.0;
    int coverage_n = 0;
    double precision_sum = 0.0;
    int precision_n = 0;
  };
  std::map<std::string, Group> groups;
  for (const auto& r : records) {
    DirectionKey key = compiler.classify(r.direction_key);
    if (key.kind != KeyKind::lf_pd && key.kind != KeyKind::lf_gd) continue;
    auto& g = groups[key_kind_name(key.kind)];
    g.runs += 1;
    auto target_pred = compiler.target_predicate(key);
    if (!target_pred || !r.current_endpoint_id) {
      g.skipped += 1;
      continue;
    }
    const Endpoint& current = zoo.by_id(*r.current_endpoint_id);
    std::vector<int> target(static_cast<std::size_t>(zoo.size()), 0);
    int t = 0;
    for (int m = 0; m < zoo.size(); ++m) {
      target[static_cast<std::size_t>(m)] =
          eval_predicate(*target_pred, zoo.endpoints[static_cast<std::size_t>(m)], current, zoo);
      t += target[static_cast<std::size_t>(m)];
    }
    if (t == 0) {
      g.skipped += 1;
      continue;
    }
    auto cp = coverage_precision(r.mask, target);
    g.coverage_sum += cp.coverage;
    g.coverage_n += 1;
    if (cp.precision) {
      g.precision_sum += *cp.precision;
      g.precision_n += 1;
    } else {
      g.undefined_precision += 1;
    }
  }
  std::ostringstream out;
  out << "group,runs,scored_runs,mean_coverage,mean_precision,undefined_precision_runs,"
         "skipped_runs\n";
  for (const auto& [name, g] : groups) {
    out << name << ',' << g.runs << ',' << g.coverage_n << ','
        << (g.coverage_n ? detail::fixed(g.coverage_sum / g.coverage_n, 4) : "-") << ','
        << (g.precision_n ? detail::fixed(g.precision_sum / g.precision_n, 4) : "-") << ','
        << g.undefined_precision << ',' << g.skipped << '\n';
  }
  return out.str();
}

/// Per-endpoint selection frequency over no-feedback Case S runs.
inline std::string selection_frequency_csv(const std::vector<RunRecord>& records, const Zoo& zoo,
                                           const KeyCompiler& compiler) {
  std::vector<int> counts(static_cast<std::size_t>(zoo.size()), 0);
  int total = 0;
  for (const auto& r : records) {
    if (compiler.classify(r.direction_key).kind != KeyKind::nf) continue;
    if (r.postcondition.label != Outcome::case_s) continue;
    total += 1;
    for (std::size_t m = 0; m < r.mask.bits.size(); ++m)
      if (r.mask.bits[m]) counts[m] += 1;
  }
  std::ostringstream out;
  out << "endpoint_id,model,count,frequency\n";
  for (int m = 0; m < zoo.size(); ++m) {
    const auto& e = zoo.endpoints[static_cast<std::size_t>(m)];
    double freq = total ? static_cast<double>(counts[static_cast<std::size_t>(m)]) / total : 0.0;
    out << e.id << ',' << e.model << ',' << counts[static_cast<std::size_t>(m)] << ','
        << detail::fixed(freq, 4) << '\n';
  }
  return out.str();
}

inline std::string set_size_stats_csv(const std::vector<RunRecord>& records,
                                      const KeyCompiler& compiler) {
  std::vector<double> sizes;
  for (const auto& r : records) {
    if (compiler.classify(r.direction_key).kind != KeyKind::nf) continue;
    if (r.postcondition.label != Outcome::case_s) continue;
    sizes.push_back(static_cast<double>(r.mask.popcount()));
  }
  std::ostringstream out;
  out << "stat,value\n";
  out << "runs," << sizes.size() << '\n';
  if (!sizes.empty()) {
    double mean = 0.0;
    for (double s : sizes) mean += s;
    mean /= static_cast<double>(sizes.size());
    out << "mean," << detail::fixed(mean, 4) << '\n';
    out << "q25," << detail::fixed(detail::nearest_rank(sizes, 0.25), 4) << '\n';
    out << "median," << detail::fixed(detail::nearest_rank(sizes, 0.50), 4) << '\n';
    out << "q75," << detail::fixed(detail::nearest_rank(sizes, 0.75), 4) << '\n';
    out << "min," << detail::fixed(*std::min_element(sizes.begin(), sizes.end()), 4) << '\n';
    out << "max," << detail::fixed(*std::max_element(sizes.begin(), sizes.end()), 4) << '\n';
  }
  return out.str();
}

inline std::string set_size_histogram_csv(const std::vector<RunRecord>& records,
                                          const KeyCompiler& compiler) {
  std::map<int, int> hist;
  for (const auto& r : records) {
    if (compiler.classify(r.direction_key).kind != KeyKind::nf) continue;
    if (r.postcondition.label != Outcome::case_s) continue;
    hist[r.mask.popcount()] += 1;
  }
  std::ostringstream out;
  out << "set_size,count\n";
  for (const auto& [size, count] : hist) out << size << ',' << count << '\n';
  return out.str();
}

/// Percentile/mean comparison of the no-feedback selection multiset against
/// the full zoo on the key objective attributes.
inline std::string attribute_comparison_csv(const std::vector<RunRecord>& records, const Zoo& zoo,
                                            const KeyCompiler& compiler) {
  static const char* kAttributes[] = {"Intelligence", "Speed",          "Input Price",
                                      "Cached Price", "Output Price",   "Context Window",
                                      "Max Output"};
  std::ostringstream out;
  out << "attribute,zoo_mean,zoo_q25,zoo_median,zoo_q75,nf_mean,nf_q25,nf_median,nf_q75\n";
  for (const char* name : kAttributes) {
    int j = zoo.attribute_index(name);
    if (j < 0) continue;
    auto zoo_vals = attribute_values(zoo, j);
    std::vector<double> nf_vals;
    for (const auto& r : records) {
      if (compiler.classify(r.direction_key).kind != KeyKind::nf) continue;
      if (r.postcondition.label != Outcome::case_s) continue;
      for (int m = 0; m < zoo.size(); ++m) {
        if (!r.mask.bits[static_cast<std::size_t>(m)]) continue;
        const auto& v = zoo.value(m, j);
        if (v.number) nf_vals.push_back(*v.number);
      }
    }
    auto stats = [](const std::vector<double>& vals) {
      std::ostringstream s;
      if (vals.empty()) {
        s << "-,-,-,-";
        return s.str();
      }
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= static_cast<double>(vals.size());
      s << detail::fixed(mean, 4) << ',' << detail::fixed(detail::nearest_rank(vals, 0.25), 4)
        << ',' << detail::fixed(detail::nearest_rank(vals, 0.50), 4) << ','
        << detail::fixed(detail::nearest_rank(vals, 0.75), 4);
      return s.str();
    };
    out << name << ',' << stats(zoo_vals) << ',' << stats(nf_vals) << '\n';
  }
  return out.str();
}

/// Plain-text implicit-prior report: selected regularization, intercept,
/// sparse weights, ranking diagnostics and (when available) permutation
/// p-values, plus the CV table.
inline std::string prior_report_text(const ModelSelection& selection, const PredicateLibrary& lib,
                                     const RunMatrix& runs,
                                     const PermutationResult* perm = nullptr,
                                     std::optional<std::uint64_t> perm_seed = std::nullopt) {
  std::ostringstream out;
  const PriorModel& model = selection.model;
  out << "implicit-prior report\n";
  out << "=====================\n";
  out << "runs: " << runs.run_count() << " (labels:";
  for (Outcome o : runs.admitted) out << ' ' << outcome_name(o);
  out << ")\n";
  out << "selected R: " << detail::repr(selection.reg_strength) << '\n';
  out << "intercept b: " << detail::fixed(model.intercept, 4) << '\n';
  out << "nonzero clauses: " << model.nonzero_count() << '/' << lib.predicate_count() << "\n\n";

  out << "clause                                    weight\n";
  std::vector<int> order;
  for (int j = 0; j < lib.predicate_count(); ++j)
    if (model.weights[static_cast<std::size_t>(j)] != 0.0) order.push_back(j);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return std::abs(model.weights[static_cast<std::size_t>(a)]) >
           std::abs(model.weights[static_cast<std::size_t>(b)]);
  });
  for (int j : order) {
    std::string name = lib.names[static_cast<std::size_t>(j)];
    name.resize(40, ' ');
    out << name << "  " << detail::fixed(model.weights[static_cast<std::size_t>(j)], 4) << '\n';
  }
  if (order.empty()) out << "(all weights zero)\n";
  out << '\n';

  out << "diagnostics\n";
  const auto& d = model.diagnostics;
  out << "pair AUC: " << (d.pair_auc ? detail::fixed(*d.pair_auc, 4) : "-") << '\n';
  out << "spearman vs selection rate: " << (d.spearman ? detail::fixed(*d.spearman, 4) : "-")
      << '\n';
  out << "top-" << d.topk_k << " recovery: "
      << (d.topk ? std::to_string(*d.topk) + "/" + std::to_string(d.topk_k) : "-") << '\n';
  if (perm) {
    out << "permutation test (n=" << perm->trials;
    if (perm_seed) out << ", seed=" << *perm_seed;
    out << "): p_auc=" << detail::fixed(perm->p_auc, 4)
        << " p_topk=" << detail::fixed(perm->p_topk, 4)
        << " p_spearman=" << detail::fixed(perm->p_spearman, 4) << '\n';
    out << "null means: auc=" << detail::fixed(perm->null_auc_mean, 4)
        << " topk=" << detail::fixed(perm->null_topk_mean, 4)
        << " spearman=" << detail::fixed(perm->null_spearman_mean, 4) << '\n';
  } else {
    out << "permutation test: not run\n";
  }
  out << '\n';

  out << "cv table (group " << "cross-validation by run)\n";
  out << "R          cv_auc     nonzero\n";
  for (const auto& row : selection.cv_table) {
    std::string r = detail::repr(row.reg_strength);
    r.resize(9, ' ');
    out << r << "  " << detail::fixed(row.cv_auc, 4) << "     " << row.refit_nonzero << '\n';
  }
  return out.str();
}

}  // namespace report
}  // namespace routelens
