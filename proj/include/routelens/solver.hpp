#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <istream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "routelens/detail/strings.hpp"
#include "routelens/dirkey.hpp"
#include "routelens/errors.hpp"
#include "routelens/zoo.hpp"

namespace routelens {

/// Fully materialized weighted selection instance: per-endpoint satisfaction
/// literals for every hard and soft clause, soft weights, budget [L, U] and
/// size penalty. No predicate evaluation happens inside the solver.
struct MaxSmtInstance {
  int endpoint_count = 0;
  std::vector<std::vector<std::uint8_t>> hard_lits;  // [M][|hard|]
  std::vector<std::vector<std::uint8_t>> soft_lits;  // [M][|soft|]
  std::vector<double> soft_weights;
  int budget_low = 0;
  int budget_high = 0;
  double penalty = 0.0;
  SolveMode mode = SolveMode::shortlist;

  int hard_count() const { return hard_lits.empty() ? 0 : static_cast<int>(hard_lits[0].size()); }
  int soft_count() const { return static_cast<int>(soft_weights.size()); }
};

struct Selection {
  std::vector<int> chosen;  // 0/1 per endpoint
  double objective = 0.0;
  bool feasible = false;
  std::vector<double> per_endpoint_utility;

  std::vector<int> chosen_ids() const {  // 1-based
    std::vector<int> ids;
    for (std::size_t m = 0; m < chosen.size(); ++m)
      if (chosen[m]) ids.push_back(static_cast<int>(m) + 1);
    return ids;
  }
  int chosen_count() const { return std::accumulate(chosen.begin(), chosen.end(), 0); }
};

inline MaxSmtInstance build_instance(const ConstraintSet& cs, const Zoo& zoo,
                                     const Endpoint& current) {
  MaxSmtInstance inst;
  inst.endpoint_count = zoo.size();
  inst.budget_low = cs.budget_low;
  inst.budget_high = cs.budget_high;
  inst.penalty = cs.penalty;
  inst.mode = cs.mode;
  inst.soft_weights.reserve(cs.soft.size());
  for (const auto& wp : cs.soft) inst.soft_weights.push_back(wp.weight);
  inst.hard_lits.resize(static_cast<std::size_t>(zoo.size()));
  inst.soft_lits.resize(static_cast<std::size_t>(zoo.size()));
  for (int m = 0; m < zoo.size(); ++m) {
    const Endpoint& cand = zoo.endpoints[static_cast<std::size_t>(m)];
    auto& hrow = inst.hard_lits[static_cast<std::size_t>(m)];
    auto& srow = inst.soft_lits[static_cast<std::size_t>(m)];
    hrow.reserve(cs.hard.size());
    srow.reserve(cs.soft.size());
    for (const auto& p : cs.hard)
      hrow.push_back(static_cast<std::uint8_t>(eval_predicate(p, cand, current, zoo)));
    for (const auto& wp : cs.soft)
      srow.push_back(static_cast<std::uint8_t>(eval_predicate(wp.predicate, cand, current, zoo)));
  }
  return inst;
}

namespace detail {

inline std::vector<double> utilities(const MaxSmtInstance& inst) {
  std::vector<double> u(static_cast<std::size_t>(inst.endpoint_count), 0.0);
  for (int m = 0; m < inst.endpoint_count; ++m) {
    double s = 0.0;
    const auto& row = inst.soft_lits[static_cast<std::size_t>(m)];
    for (int j = 0; j < inst.soft_count(); ++j)
      if (row[static_cast<std::size_t>(j)]) s += inst.soft_weights[static_cast<std::size_t>(j)];
    u[static_cast<std::size_t>(m)] = s - inst.penalty;
  }
  return u;
}

inline bool hard_ok(const MaxSmtInstance& inst, int m) {
  const auto& row = inst.hard_lits[static_cast<std::size_t>(m)];
  return std::all_of(row.begin(), row.end(), [](std::uint8_t b) { return b != 0; });
}

}  // namespace detail

/// Exact solver. The objective sum_{m,j} w_j y_{m,j} - penalty * sum_m x_m is
/// separable per endpoint once hard clauses are reduced to a feasible set F,
/// so a greedy-by-utility selection is optimal under the cardinality budget:
/// take every hard-feasible endpoint with positive utility, pad to L with the
/// best remaining members of F, trim to U keeping the top-U. Ties break to the
/// lowest endpoint index. Completeness mode instead returns exactly F (the
/// biconditional reading), ignoring budget and penalty regularization.
///
/// Infeasibility (|F| < L) is reported as a value, not an exception.
inline Selection solve(const MaxSmtInstance& inst) {
  const int m_count = inst.endpoint_count;
  Selection sel;
  sel.per_endpoint_utility = detail::utilities(inst);
  sel.chosen.assign(static_cast<std::size_t>(m_count), 0);

  std::vector<int> feasible;
  for (int m = 0; m < m_count; ++m)
    if (detail::hard_ok(inst, m)) feasible.push_back(m);

  const auto& u = sel.per_endpoint_utility;
  if (inst.mode == SolveMode::completeness) {
    for (int m : feasible) sel.chosen[static_cast<std::size_t>(m)] = 1;
    sel.feasible = true;
  } else {
    if (static_cast<int>(feasible.size()) < inst.budget_low) {
      sel.feasible = false;
      sel.objective = 0.0;
      return sel;
    }
    std::vector<int> picked;
    for (int m : feasible)
      if (u[static_cast<std::size_t>(m)] > 0.0) picked.push_back(m);
    if (static_cast<int>(picked.size()) < inst.budget_low) {
      std::vector<int> rest;
      for (int m : feasible)
        if (u[static_cast<std::size_t>(m)] <= 0.0) rest.push_back(m);
      std::stable_sort(rest.begin(), rest.end(), [&](int a, int b) {
        return u[static_cast<std::size_t>(a)] > u[static_cast<std::size_t>(b)];
      });
      for (int m : rest) {
        if (static_cast<int>(picked.size()) >= inst.budget_low) break;
        picked.push_back(m);
      }
    }
    if (static_cast<int>(picked.size()) > inst.budget_high) {
      std::stable_sort(picked.begin(), picked.end(), [&](int a, int b) {
        return u[static_cast<std::size_t>(a)] > u[static_cast<std::size_t>(b)];
      });
      picked.resize(static_cast<std::size_t>(inst.budget_high));
    }
    for (int m : picked) sel.chosen[static_cast<std::size_t>(m)] = 1;
    sel.feasible = true;
  }

  double obj = 0.0;
  for (int m = 0; m < m_count; ++m)
    if (sel.chosen[static_cast<std::size_t>(m)]) obj += u[static_cast<std::size_t>(m)];
  sel.objective = obj;
  return sel;
}

/// Exhaustive 2^M reference. Hard clauses are applied as implications and the
/// budget as a cardinality window; among objective ties the first assignment
/// in mask order (endpoint 1 = least-significant bit) wins, so the empty set
/// is preferred when everything ties.
inline Selection solve_oracle(const MaxSmtInstance& inst) {
  const int m_count = inst.endpoint_count;
  if (m_count > 20)
    raise(Errc::size_guard, "oracle limited to M <= 20, got " + std::to_string(m_count));

  Selection sel;
  sel.per_endpoint_utility = detail::utilities(inst);
  sel.chosen.assign(static_cast<std::size_t>(m_count), 0);
  const auto& u = sel.per_endpoint_utility;

  std::uint32_t hard_mask = 0;  // endpoints satisfying every hard clause
  for (int m = 0; m < m_count; ++m)
    if (detail::hard_ok(inst, m)) hard_mask |= (1u << m);

  bool found = false;
  double best = 0.0;
  std::uint32_t best_mask = 0;
  const std::uint32_t end = m_count >= 32 ? 0 : (1u << m_count);
  for (std::uint32_t mask = 0; mask != end; ++mask) {
    if ((mask & ~hard_mask) != 0) continue;
    int size = std::popcount(mask);
    if (size < inst.budget_low || size > inst.budget_high) continue;
    double obj = 0.0;
    for (int m = 0; m < m_count; ++m)
      if (mask & (1u << m)) obj += u[static_cast<std::size_t>(m)];
    if (!found || obj > best) {
      found = true;
      best = obj;
      best_mask = mask;
    }
  }
  if (!found) {
    sel.feasible = false;
    sel.objective = 0.0;
    return sel;
  }
  sel.feasible = true;
  sel.objective = best;
  for (int m = 0; m < m_count; ++m)
    if (best_mask & (1u << m)) sel.chosen[static_cast<std::size_t>(m)] = 1;
  return sel;
}

/// Plain-text instance dump for golden tests and cross-implementation diffs.
inline std::string dump_instance(const MaxSmtInstance& inst) {
  std::ostringstream out;
  out << "maxsmt-instance v1\n";
  out << "endpoints " << inst.endpoint_count << '\n';
  out << "mode " << solve_mode_name(inst.mode) << '\n';
  out << "budget " << inst.budget_low << ' ' << inst.budget_high << '\n';
  out << "penalty " << detail::repr(inst.penalty) << '\n';
  out << "hard " << inst.hard_count() << '\n';
  out << "soft " << inst.soft_count() << '\n';
  out << "weights";
  for (double w : inst.soft_weights) out << ' ' << detail::repr(w);
  out << '\n';
  for (int m = 0; m < inst.endpoint_count; ++m) {
    out << "lits ";
    for (auto b : inst.hard_lits[static_cast<std::size_t>(m)]) out << (b ? '1' : '0');
    out << '|';
    for (auto b : inst.soft_lits[static_cast<std::size_t>(m)]) out << (b ? '1' : '0');
    out << '\n';
  }
  return out.str();
}

inline MaxSmtInstance parse_instance(std::istream& in) {
  MaxSmtInstance inst;
  std::string line;
  auto need = [&](const char* what) {
    if (!std::getline(in, line)) raise(Errc::parse, std::string("instance dump: missing ") + what);
    return detail::split_whitespace(line);
  };
  auto head = need("header");
  if (head.size() != 2 || head[0] != "maxsmt-instance" || head[1] != "v1")
    raise(Errc::parse, "instance dump: bad header");
  auto fields = need("endpoints");
  inst.endpoint_count = std::stoi(fields.at(1));
  fields = need("mode");
  inst.mode = fields.at(1) == "completeness" ? SolveMode::completeness : SolveMode::shortlist;
  fields = need("budget");
  inst.budget_low = std::stoi(fields.at(1));
  inst.budget_high = std::stoi(fields.at(2));
  fields = need("penalty");
  inst.penalty = std::stod(fields.at(1));
  fields = need("hard");
  int hard = std::stoi(fields.at(1));
  fields = need("soft");
  int soft = std::stoi(fields.at(1));
  fields = need("weights");
  for (std::size_t i = 1; i < fields.size(); ++i) inst.soft_weights.push_back(std::stod(fields[i]));
  if (static_cast<int>(inst.soft_weights.size()) != soft)
    raise(Errc::parse, "instance dump: weight count mismatch");
  for (int m = 0; m < inst.endpoint_count; ++m) {
    fields = need("lits row");
    std::string bits = fields.size() > 1 ? fields[1] : "|";
    auto bar = bits.find('|');
    if (fields.at(0) != "lits" || bar == std::string::npos)
      raise(Errc::parse, "instance dump: bad lits row " + std::to_string(m + 1));
    std::string hbits = bits.substr(0, bar), sbits = bits.substr(bar + 1);
    if (static_cast<int>(hbits.size()) != hard || static_cast<int>(sbits.size()) != soft)
      raise(Errc::parse, "instance dump: lits width mismatch at row " + std::to_string(m + 1));
    std::vector<std::uint8_t> hrow, srow;
    for (char c : hbits) hrow.push_back(c == '1');
    for (char c : sbits) srow.push_back(c == '1');
    inst.hard_lits.push_back(std::move(hrow));
    inst.soft_lits.push_back(std::move(srow));
  }
  return inst;
}

}  // namespace routelens
