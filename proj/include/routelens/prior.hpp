#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "routelens/detail/rng.hpp"
#include "routelens/errors.hpp"
#include "routelens/postcond.hpp"
#include "routelens/zoo.hpp"

namespace routelens {

/// The fixed library of boolean metadata predicates used to explain
/// no-feedback selections, with its materialized M x J feature matrix.
/// Quantile anchors are computed over the full zoo; tier-relative predicates
/// are computed within intelligence groups. Several columns coincide on the
/// bundled pool (e.g. speed_gt_3 and speed_ge_4 with integer scores); they are
/// kept as listed.
struct PredicateLibrary {
  std::vector<std::string> names;
  std::vector<std::vector<std::uint8_t>> features;  // [M][J]

  int endpoint_count() const { return static_cast<int>(features.size()); }
  int predicate_count() const { return static_cast<int>(names.size()); }

  int predicate_index(std::string_view name) const {
    for (std::size_t j = 0; j < names.size(); ++j)
      if (names[j] == name) return static_cast<int>(j);
    return -1;
  }
};

inline PredicateLibrary build_library(const Zoo& zoo) {
  PredicateLibrary lib;
  lib.names = {
      "cached_input_available",
      "reasoning_enabled",
      "cached_and_reasoning",
      "int_ge_4",
      "int_is_max",
      "speed_gt_3",
      "speed_ge_4",
      "cheap_output_global_q0.25",
      "cheap_input_global_q0.25",
      "cheap_output_in_int_tier_q0.25",
      "ctx_ge_median",
      "ctx_ge_p75",
      "maxout_ge_median",
      "maxout_ge_p75",
      "cheap_cached_price_global_q0.25",
      "int_ge_4_and_cached",
      "cached_and_cheap_output_in_tier",
      "int_ge_4_and_cheap_output_in_tier",
      "ctx_p75_and_cached",
  };

  auto attr = [&](const char* name, const char* predicate) {
    int j = zoo.attribute_index(name);
    if (j < 0)
      raise(Errc::unknown_attribute, std::string("predicate ") + predicate +
                                         " needs attribute '" + name + "'");
    return j;
  };
  const int j_cached = attr("Cached Price", "cached_input_available");
  const int j_reason = attr("Reasoning", "reasoning_enabled");
  const int j_int = attr("Intelligence", "int_ge_4");
  const int j_speed = attr("Speed", "speed_gt_3");
  const int j_out = attr("Output Price", "cheap_output_global_q0.25");
  const int j_in = attr("Input Price", "cheap_input_global_q0.25");
  const int j_ctx = attr("Context Window", "ctx_ge_median");
  const int j_maxout = attr("Max Output", "maxout_ge_median");

  const double out_q25 = attribute_quantile(zoo, "Output Price", 0.25);
  const double in_q25 = attribute_quantile(zoo, "Input Price", 0.25);
  const double ctx_med = attribute_quantile(zoo, "Context Window", 0.50);
  const double ctx_p75 = attribute_quantile(zoo, "Context Window", 0.75);
  const double mo_med = attribute_quantile(zoo, "Max Output", 0.50);
  const double mo_p75 = attribute_quantile(zoo, "Max Output", 0.75);
  const double int_max = attribute_quantile(zoo, "Intelligence", 1.0);

  // Cached Price can be missing; its quantile is over the available values.
  std::optional<double> cached_q25;
  if (!attribute_values(zoo, j_cached).empty())
    cached_q25 = attribute_quantile(zoo, "Cached Price", 0.25);

  // Output-price q0.25 within each intelligence tier.
  std::map<int, std::vector<double>> tier_prices;
  for (const auto& e : zoo.endpoints) {
    const auto& iv = e.values[static_cast<std::size_t>(j_int)];
    const auto& ov = e.values[static_cast<std::size_t>(j_out)];
    if (!iv.missing() && !ov.missing())
      tier_prices[static_cast<int>(*iv.number)].push_back(*ov.number);
  }
  std::map<int, double> tier_q25;
  for (auto& [tier, prices] : tier_prices)
    tier_q25[tier] = detail::nearest_rank(prices, 0.25);

  lib.features.reserve(zoo.endpoints.size());
  for (const auto& e : zoo.endpoints) {
    auto num = [&](int j) -> std::optional<double> {
      return e.values[static_cast<std::size_t>(j)].number;
    };
    const bool cached = num(j_cached).has_value();
    const bool reasoning = num(j_reason) == 1.0;
    const auto intel = num(j_int);
    const auto speed = num(j_speed);
    const auto out_price = num(j_out);
    const auto in_price = num(j_in);
    const auto ctx = num(j_ctx);
    const auto maxout = num(j_maxout);

    const bool int_ge_4 = intel && *intel >= 4;
    bool cheap_tier = false;
    if (intel && out_price) {
      auto it = tier_q25.find(static_cast<int>(*intel));
      cheap_tier = it != tier_q25.end() && *out_price <= it->second;
    }

    std::vector<std::uint8_t> row = {
        static_cast<std::uint8_t>(cached),
        static_cast<std::uint8_t>(reasoning),
        static_cast<std::uint8_t>(cached && reasoning),
        static_cast<std::uint8_t>(int_ge_4),
        static_cast<std::uint8_t>(intel && *intel == int_max),
        static_cast<std::uint8_t>(speed && *speed > 3),
        static_cast<std::uint8_t>(speed && *speed >= 4),
        static_cast<std::uint8_t>(out_price && *out_price <= out_q25),
        static_cast<std::uint8_t>(in_price && *in_price <= in_q25),
        static_cast<std::uint8_t>(cheap_tier),
        static_cast<std::uint8_t>(ctx && *ctx >= ctx_med),
        static_cast<std::uint8_t>(ctx && *ctx >= ctx_p75),
        static_cast<std::uint8_t>(maxout && *maxout >= mo_med),
        static_cast<std::uint8_t>(maxout && *maxout >= mo_p75),
        static_cast<std::uint8_t>(cached && cached_q25 && *num(j_cached) <= *cached_q25),
        static_cast<std::uint8_t>(int_ge_4 && cached),
        static_cast<std::uint8_t>(cached && cheap_tier),
        static_cast<std::uint8_t>(int_ge_4 && cheap_tier),
        static_cast<std::uint8_t>(ctx && *ctx >= ctx_p75 && cached),
    };
    lib.features.push_back(std::move(row));
  }
  return lib;
}

/// Run-endpoint inclusion data: one row per admitted run with its binary
/// inclusion vector over the zoo.
struct RunMatrix {
  struct Row {
    std::string run_id;
    std::vector<int> bits;
  };
  std::vector<Row> rows;
  std::vector<Outcome> admitted;  // which postcondition labels were admitted
  int endpoint_count = 0;

  int run_count() const { return static_cast<int>(rows.size()); }
};

struct PriorDiagnostics {
  std::optional<double> pair_auc;
  std::optional<double> spearman;
  std::optional<int> topk;
  int topk_k = 8;
  std::optional<double> p_auc;
  std::optional<double> p_topk;
  std::optional<double> p_spearman;
};

/// Sparse implicit-clause-weight model: Pr(x=1) = sigmoid(b + sum_j w_j psi_j).
struct PriorModel {
  double intercept = 0.0;
  std::vector<double> weights;
  double reg_strength = 0.0;  // R; larger R = weaker regularization
  PriorDiagnostics diagnostics;

  int nonzero_count() const {
    int n = 0;
    for (double w : weights)
      if (w != 0.0) ++n;
    return n;
  }
};

namespace detail {

inline double sigmoid(double z) {
  if (z >= 36.0) return 1.0;
  if (z <= -36.0) return 0.0;
  return 1.0 / (1.0 + std::exp(-z));
}

inline double softplus(double t) {
  if (t > 36.0) return t;
  if (t < -36.0) return 0.0;
  return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

inline double clamp_intercept(double b) { return std::max(-30.0, std::min(30.0, b)); }

/// Per-endpoint positive counts aggregated over runs. All (run, endpoint)
/// pairs with the same endpoint share a feature row, so the logistic
/// objective reduces to M weighted terms.
struct InclusionCounts {
  std::vector<double> pos;
  int runs = 0;

  static InclusionCounts from(const RunMatrix& rm) {
    InclusionCounts c;
    c.pos.assign(static_cast<std::size_t>(rm.endpoint_count), 0.0);
    c.runs = rm.run_count();
    for (const auto& row : rm.rows)
      for (std::size_t m = 0; m < row.bits.size(); ++m)
        if (row.bits[m]) c.pos[m] += 1.0;
    return c;
  }

  double total_pos() const {
    double s = 0.0;
    for (double p : pos) s += p;
    return s;
  }
};

inline std::vector<double> linear_scores(const PredicateLibrary& lib, double b,
                                         const std::vector<double>& w) {
  const int m_count = lib.endpoint_count();
  const int j_count = lib.predicate_count();
  std::vector<double> z(static_cast<std::size_t>(m_count), b);
  for (int m = 0; m < m_count; ++m) {
    const auto& row = lib.features[static_cast<std::size_t>(m)];
    double acc = 0.0;
    for (int j = 0; j < j_count; ++j)
      if (row[static_cast<std::size_t>(j)]) acc += w[static_cast<std::size_t>(j)];
    z[static_cast<std::size_t>(m)] += acc;
  }
  return z;
}

/// Proximal-gradient (FISTA with function restart) fit of the L1 objective
///   (1/N) sum_pairs log-loss + alpha * ||w||_1,   alpha = 1/(R*N),
/// intercept unpenalized, started from w = 0, b = logit(mean inclusion).
/// The full-gradient method keeps exactly duplicated predicate columns at
/// identical weights, so collinear groups enter or leave the support
/// together instead of collapsing onto an arbitrary representative.
inline PriorModel fit_counts(const InclusionCounts& counts, const PredicateLibrary& lib,
                             double reg_strength) {
  if (reg_strength <= 0) raise(Errc::config, "regularization strength R must be positive");
  if (counts.runs < 1) raise(Errc::insufficient_data, "fit needs at least one run");
  const int m_count = lib.endpoint_count();
  const int j_count = lib.predicate_count();
  const double n_pairs = static_cast<double>(counts.runs) * m_count;
  const double alpha = 1.0 / (reg_strength * n_pairs);

  PriorModel model;
  model.reg_strength = reg_strength;
  model.weights.assign(static_cast<std::size_t>(j_count), 0.0);

  const double total_pos = counts.total_pos();
  if (total_pos == 0.0 || total_pos == n_pairs) {
    // Degenerate labels: intercept-only model at the configured floor/cap.
    model.intercept = total_pos == 0.0 ? -30.0 : 30.0;
    return model;
  }
  double pbar = total_pos / n_pairs;
  double b = clamp_intercept(std::log(pbar / (1.0 - pbar)));
  model.intercept = b;

  std::vector<double> w(static_cast<std::size_t>(j_count), 0.0);
  auto smooth = [&](double bb, const std::vector<double>& ww) {
    auto z = linear_scores(lib, bb, ww);
    double s = 0.0;
    for (int m = 0; m < m_count; ++m) {
      double pos = counts.pos[static_cast<std::size_t>(m)];
      double neg = counts.runs - pos;
      s += pos * softplus(-z[static_cast<std::size_t>(m)]) +
           neg * softplus(z[static_cast<std::size_t>(m)]);
    }
    return s / n_pairs;
  };
  auto l1 = [&](const std::vector<double>& ww) {
    double s = 0.0;
    for (double x : ww) s += std::abs(x);
    return s;
  };
  auto gradient = [&](double bb, const std::vector<double>& ww, double& gb,
                      std::vector<double>& gw) {
    auto z = linear_scores(lib, bb, ww);
    gb = 0.0;
    std::fill(gw.begin(), gw.end(), 0.0);
    for (int m = 0; m < m_count; ++m) {
      double pos = counts.pos[static_cast<std::size_t>(m)];
      double gz = (counts.runs * sigmoid(z[static_cast<std::size_t>(m)]) - pos) / n_pairs;
      gb += gz;
      const auto& row = lib.features[static_cast<std::size_t>(m)];
      for (int j = 0; j < j_count; ++j)
        if (row[static_cast<std::size_t>(j)]) gw[static_cast<std::size_t>(j)] += gz;
    }
  };

  constexpr double kObjTol = 1e-8;
  constexpr double kStepTol = 1e-9;
  constexpr int kMaxIter = 50000;

  double yb = b;
  std::vector<double> yw = w;
  double t_mom = 1.0;
  double step = 1.0;
  double f_prev = smooth(b, w) + alpha * l1(w);
  double gb = 0.0;
  std::vector<double> gw(static_cast<std::size_t>(j_count), 0.0);
  std::vector<double> nw(static_cast<std::size_t>(j_count), 0.0);

  for (int iter = 0; iter < kMaxIter; ++iter) {
    gradient(yb, yw, gb, gw);
    double smooth_y = smooth(yb, yw);
    double nb = 0.0, f_new = 0.0;
    step *= 2.0;  // let the step recover; backtracking shrinks it again as needed
    while (true) {
      nb = yb - step * gb;
      for (int j = 0; j < j_count; ++j) {
        double v = yw[static_cast<std::size_t>(j)] - step * gw[static_cast<std::size_t>(j)];
        double thr = step * alpha;
        nw[static_cast<std::size_t>(j)] = v > thr ? v - thr : (v < -thr ? v + thr : 0.0);
      }
      f_new = smooth(nb, nw) + alpha * l1(nw);
      double lin = gb * (nb - yb);
      double quad = (nb - yb) * (nb - yb);
      for (int j = 0; j < j_count; ++j) {
        double d = nw[static_cast<std::size_t>(j)] - yw[static_cast<std::size_t>(j)];
        lin += gw[static_cast<std::size_t>(j)] * d;
        quad += d * d;
      }
      double majorizer = smooth_y + lin + quad / (2.0 * step) + alpha * l1(nw);
      if (f_new <= majorizer + 1e-15) break;
      step *= 0.5;
      if (step < 1e-18) break;
    }
    double t_next = (1.0 + std::sqrt(1.0 + 4.0 * t_mom * t_mom)) / 2.0;
    double delta = std::abs(nb - b);
    for (int j = 0; j < j_count; ++j)
      delta = std::max(delta, std::abs(nw[static_cast<std::size_t>(j)] -
                                       w[static_cast<std::size_t>(j)]));
    if (f_new > f_prev) {
      // Momentum overshoot: restart from the plain proximal point.
      yb = nb;
      yw = nw;
      t_mom = 1.0;
    } else {
      double mix = (t_mom - 1.0) / t_next;
      yb = nb + mix * (nb - b);
      for (int j = 0; j < j_count; ++j)
        yw[static_cast<std::size_t>(j)] =
            nw[static_cast<std::size_t>(j)] +
            mix * (nw[static_cast<std::size_t>(j)] - w[static_cast<std::size_t>(j)]);
      t_mom = t_next;
    }
    b = nb;
    w = nw;
    bool converged = std::abs(f_prev - f_new) <= kObjTol && delta <= kStepTol;
    f_prev = f_new;
    if (converged) break;
  }

  model.intercept = clamp_intercept(b);
  model.weights = w;
  return model;
}

inline std::vector<double> predicted_probabilities(const PriorModel& model,
                                                   const PredicateLibrary& lib) {
  auto z = linear_scores(lib, model.intercept, model.weights);
  for (double& v : z) v = sigmoid(v);
  return z;
}

/// Exact pair AUC from per-endpoint (pos, neg) counts: scores take at most M
/// distinct values, so the O(M^2) loop covers every label pair. Ties count 1/2.
inline std::optional<double> pair_auc_counts(const std::vector<double>& scores,
                                             const InclusionCounts& counts) {
  const int m_count = static_cast<int>(scores.size());
  double total_pos = counts.total_pos();
  double total_neg = static_cast<double>(counts.runs) * m_count - total_pos;
  if (total_pos == 0.0 || total_neg == 0.0) return std::nullopt;
  double acc = 0.0;
  for (int a = 0; a < m_count; ++a) {
    double pos = counts.pos[static_cast<std::size_t>(a)];
    if (pos == 0.0) continue;
    for (int bb = 0; bb < m_count; ++bb) {
      double neg = counts.runs - counts.pos[static_cast<std::size_t>(bb)];
      if (neg == 0.0) continue;
      if (scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(bb)])
        acc += pos * neg;
      else if (scores[static_cast<std::size_t>(a)] == scores[static_cast<std::size_t>(bb)])
        acc += 0.5 * pos * neg;
    }
  }
  return acc / (total_pos * total_neg);
}

inline std::vector<double> average_ranks(const std::vector<double>& v) {
  const int n = static_cast<int>(v.size());
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return v[static_cast<std::size_t>(a)] < v[static_cast<std::size_t>(b)]; });
  std::vector<double> ranks(static_cast<std::size_t>(n), 0.0);
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && v[static_cast<std::size_t>(idx[static_cast<std::size_t>(j + 1)])] ==
                            v[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])])
      ++j;
    double rank = (i + j) / 2.0 + 1.0;
    for (int k = i; k <= j; ++k) ranks[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])] = rank;
    i = j + 1;
  }
  return ranks;
}

inline std::optional<double> spearman_values(const std::vector<double>& x,
                                             const std::vector<double>& y) {
  auto rx = average_ranks(x);
  auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

inline int topk_overlap(const std::vector<double>& scores, const std::vector<double>& rates,
                        int k) {
  const int n = static_cast<int>(scores.size());
  auto top = [&](const std::vector<double>& v) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      return v[static_cast<std::size_t>(a)] > v[static_cast<std::size_t>(b)];
    });
    idx.resize(static_cast<std::size_t>(k));
    return idx;
  };
  auto ta = top(scores);
  auto tb = top(rates);
  int overlap = 0;
  for (int a : ta)
    for (int b : tb)
      if (a == b) ++overlap;
  return overlap;
}

}  // namespace detail

/// L1-regularized logistic fit of implicit clause weights over all
/// (run, endpoint) inclusion pairs. Deterministic; degenerate labels yield an
/// intercept-only model with the intercept clamped at +/-30.
inline PriorModel fit(const RunMatrix& runs, const PredicateLibrary& lib, double reg_strength) {
  return detail::fit_counts(detail::InclusionCounts::from(runs), lib, reg_strength);
}

/// Probability that a uniformly random (selected, unselected) pair across all
/// run-endpoint labels is ranked correctly by the model; ties count 1/2.
inline double pair_auc(const PriorModel& model, const RunMatrix& runs,
                       const PredicateLibrary& lib) {
  auto counts = detail::InclusionCounts::from(runs);
  auto scores = detail::predicted_probabilities(model, lib);
  auto auc = detail::pair_auc_counts(scores, counts);
  if (!auc) raise(Errc::undefined_auc, "pair AUC needs both positive and negative labels");
  return *auc;
}

/// Spearman rank correlation (average-rank ties) between predicted
/// per-endpoint probabilities and empirical selection rates.
inline double spearman_selection_rate(const PriorModel& model, const RunMatrix& runs,
                                      const PredicateLibrary& lib) {
  if (runs.endpoint_count < 2)
    raise(Errc::insufficient_data, "spearman needs at least two endpoints");
  auto counts = detail::InclusionCounts::from(runs);
  auto scores = detail::predicted_probabilities(model, lib);
  std::vector<double> rates(counts.pos.size());
  for (std::size_t m = 0; m < counts.pos.size(); ++m)
    rates[m] = counts.runs > 0 ? counts.pos[m] / counts.runs : 0.0;
  auto rho = detail::spearman_values(scores, rates);
  if (!rho) raise(Errc::undefined_correlation, "zero variance in one of the rankings");
  return *rho;
}

/// Size of the intersection between the top-k endpoints by predicted
/// probability and by empirical selection rate; ties break to the lowest
/// endpoint index on both sides.
inline int topk_recovery(const PriorModel& model, const RunMatrix& runs,
                         const PredicateLibrary& lib, int k) {
  if (k < 1 || k > runs.endpoint_count)
    raise(Errc::config, "top-k requires 1 <= k <= M");
  auto counts = detail::InclusionCounts::from(runs);
  auto scores = detail::predicted_probabilities(model, lib);
  std::vector<double> rates(counts.pos.size());
  for (std::size_t m = 0; m < counts.pos.size(); ++m)
    rates[m] = counts.runs > 0 ? counts.pos[m] / counts.runs : 0.0;
  return detail::topk_overlap(scores, rates, k);
}

/// Per-endpoint implicit-preference score s_m = sum_j w_j psi_j (no intercept).
inline std::vector<double> prior_score(const PriorModel& model, const PredicateLibrary& lib) {
  const int m_count = lib.endpoint_count();
  std::vector<double> s(static_cast<std::size_t>(m_count), 0.0);
  for (int m = 0; m < m_count; ++m) {
    const auto& row = lib.features[static_cast<std::size_t>(m)];
    double acc = 0.0;
    for (int j = 0; j < lib.predicate_count(); ++j)
      if (row[static_cast<std::size_t>(j)]) acc += model.weights[static_cast<std::size_t>(j)];
    s[static_cast<std::size_t>(m)] = acc;
  }
  return s;
}

struct CvRow {
  double reg_strength = 0.0;
  double cv_auc = 0.0;
  int refit_nonzero = 0;
};

struct ModelSelection {
  double reg_strength = 0.0;
  PriorModel model;
  std::vector<CvRow> cv_table;
};

/// Group cross-validated hyperparameter selection: runs are the CV groups
/// (never split across folds, fold = run index mod `folds`), the score is the
/// mean validation pair AUC, and the chosen R is the one whose refit-on-all
/// model is sparsest among grid values within 0.02 of the best CV-AUC
/// (ties to the smaller R).
inline ModelSelection select_model(const RunMatrix& runs, const PredicateLibrary& lib,
                                   const std::vector<double>& grid, int folds = 5) {
  if (grid.empty()) raise(Errc::config, "empty regularization grid");
  if (runs.run_count() < 2) raise(Errc::insufficient_data, "model selection needs >= 2 runs");
  if (runs.run_count() < folds)
    raise(Errc::fold_count, "have " + std::to_string(runs.run_count()) + " runs for " +
                                std::to_string(folds) + " folds");

  const int m_count = runs.endpoint_count;
  std::vector<detail::InclusionCounts> fold_counts(static_cast<std::size_t>(folds));
  for (auto& fc : fold_counts) fc.pos.assign(static_cast<std::size_t>(m_count), 0.0);
  for (int i = 0; i < runs.run_count(); ++i) {
    auto& fc = fold_counts[static_cast<std::size_t>(i % folds)];
    fc.runs += 1;
    const auto& bits = runs.rows[static_cast<std::size_t>(i)].bits;
    for (std::size_t m = 0; m < bits.size(); ++m)
      if (bits[m]) fc.pos[m] += 1.0;
  }
  detail::InclusionCounts all;
  all.pos.assign(static_cast<std::size_t>(m_count), 0.0);
  for (const auto& fc : fold_counts) {
    all.runs += fc.runs;
    for (std::size_t m = 0; m < fc.pos.size(); ++m) all.pos[m] += fc.pos[m];
  }

  ModelSelection out;
  std::vector<PriorModel> refits;
  refits.reserve(grid.size());
  for (double reg : grid) {
    double auc_sum = 0.0;
    int auc_n = 0;
    for (int f = 0; f < folds; ++f) {
      const auto& val = fold_counts[static_cast<std::size_t>(f)];
      if (val.runs == 0) continue;
      detail::InclusionCounts train;
      train.runs = all.runs - val.runs;
      train.pos.resize(all.pos.size());
      for (std::size_t m = 0; m < all.pos.size(); ++m) train.pos[m] = all.pos[m] - val.pos[m];
      PriorModel fitted = detail::fit_counts(train, lib, reg);
      auto scores = detail::predicted_probabilities(fitted, lib);
      auto auc = detail::pair_auc_counts(scores, val);
      auc_sum += auc.value_or(0.5);  // degenerate validation fold counts as chance
      auc_n += 1;
    }
    PriorModel refit = detail::fit_counts(all, lib, reg);
    CvRow row;
    row.reg_strength = reg;
    row.cv_auc = auc_n > 0 ? auc_sum / auc_n : 0.5;
    row.refit_nonzero = refit.nonzero_count();
    out.cv_table.push_back(row);
    refits.push_back(std::move(refit));
  }

  double best = out.cv_table[0].cv_auc;
  for (const auto& row : out.cv_table) best = std::max(best, row.cv_auc);
  int chosen = -1;
  for (std::size_t i = 0; i < out.cv_table.size(); ++i) {
    const auto& row = out.cv_table[i];
    if (row.cv_auc < best - 0.02) continue;
    if (chosen < 0 || row.refit_nonzero < out.cv_table[static_cast<std::size_t>(chosen)].refit_nonzero ||
        (row.refit_nonzero == out.cv_table[static_cast<std::size_t>(chosen)].refit_nonzero &&
         row.reg_strength < out.cv_table[static_cast<std::size_t>(chosen)].reg_strength))
      chosen = static_cast<int>(i);
  }
  out.reg_strength = out.cv_table[static_cast<std::size_t>(chosen)].reg_strength;
  out.model = refits[static_cast<std::size_t>(chosen)];
  return out;
}

struct PermutationResult {
  int trials = 0;
  double observed_auc = 0.0;
  double observed_spearman = 0.0;
  int observed_topk = 0;
  double p_auc = 1.0;
  double p_topk = 1.0;
  double p_spearman = 1.0;
  double null_auc_mean = 0.0;
  double null_topk_mean = 0.0;
  double null_spearman_mean = 0.0;
};

namespace detail {

struct TrialStats {
  double auc = 0.5;
  double spearman = 0.0;
  int topk = 0;
};

/// Diagnostics with total conventions for permuted refits: an undefined AUC
/// counts as chance (0.5) and an undefined Spearman (constant predictions
/// from an intercept-only null fit) counts as 0.
inline TrialStats diagnostics_total(const RunMatrix& runs, const PredicateLibrary& lib,
                                    const std::vector<double>& grid, int folds, int k) {
  auto selection = select_model(runs, lib, grid, folds);
  auto counts = InclusionCounts::from(runs);
  auto scores = predicted_probabilities(selection.model, lib);
  std::vector<double> rates(counts.pos.size());
  for (std::size_t m = 0; m < counts.pos.size(); ++m)
    rates[m] = counts.runs > 0 ? counts.pos[m] / counts.runs : 0.0;
  TrialStats st;
  st.auc = pair_auc_counts(scores, counts).value_or(0.5);
  st.spearman = spearman_values(scores, rates).value_or(0.0);
  st.topk = topk_overlap(scores, rates, k);
  return st;
}

}  // namespace detail

/// Set-size-preserving significance test: each trial permutes endpoint
/// identities independently within every run, reruns the full select_model
/// pipeline and recomputes the diagnostics. p = (1 + #{null >= observed}) /
/// (1 + n_perm). Trials derive their seeds from (seed, trial index) and may
/// run concurrently; results are bit-identical for a fixed seed regardless of
/// the thread count.
inline PermutationResult permutation_test(const RunMatrix& runs, const PredicateLibrary& lib,
                                          const std::vector<double>& grid, int n_perm,
                                          std::uint64_t seed, int folds = 5, int k = 8,
                                          int threads = 0) {
  if (n_perm < 19) raise(Errc::config, "permutation test needs n_perm >= 19");
  PermutationResult out;
  out.trials = n_perm;

  auto observed = detail::diagnostics_total(runs, lib, grid, folds, k);
  out.observed_auc = observed.auc;
  out.observed_spearman = observed.spearman;
  out.observed_topk = observed.topk;

  std::vector<detail::TrialStats> null_stats(static_cast<std::size_t>(n_perm));
  auto run_trial = [&](int t) {
    detail::Rng rng(detail::derive_seed(seed, static_cast<std::uint64_t>(t)));
    RunMatrix permuted;
    permuted.endpoint_count = runs.endpoint_count;
    permuted.admitted = runs.admitted;
    permuted.rows.reserve(runs.rows.size());
    for (const auto& row : runs.rows) {
      auto perm = rng.permutation(runs.endpoint_count);
      RunMatrix::Row prow;
      prow.run_id = row.run_id;
      prow.bits.resize(row.bits.size());
      int before = 0, after = 0;
      for (std::size_t m = 0; m < row.bits.size(); ++m) {
        prow.bits[m] = row.bits[static_cast<std::size_t>(perm[m])];
        before += row.bits[m];
        after += prow.bits[m];
      }
      if (before != after) raise(Errc::integrity, "permutation changed a run's set size");
      permuted.rows.push_back(std::move(prow));
    }
    null_stats[static_cast<std::size_t>(t)] = detail::diagnostics_total(permuted, lib, grid, folds, k);
  };

  int hw = static_cast<int>(std::thread::hardware_concurrency());
  int n_threads = threads > 0 ? threads : std::max(1, std::min(hw, 8));
  if (n_threads <= 1) {
    for (int t = 0; t < n_perm; ++t) run_trial(t);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> failures(static_cast<std::size_t>(n_threads));
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int w = 0; w < n_threads; ++w)
      pool.emplace_back([&, w] {
        try {
          for (int t = w; t < n_perm; t += n_threads) run_trial(t);
        } catch (...) {
          failures[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& ep : failures)
      if (ep) std::rethrow_exception(ep);
  }

  int ge_auc = 0, ge_topk = 0, ge_sp = 0;
  double sum_auc = 0.0, sum_topk = 0.0, sum_sp = 0.0;
  for (const auto& st : null_stats) {
    if (st.auc >= out.observed_auc) ++ge_auc;
    if (st.topk >= out.observed_topk) ++ge_topk;
    if (st.spearman >= out.observed_spearman) ++ge_sp;
    sum_auc += st.auc;
    sum_topk += st.topk;
    sum_sp += st.spearman;
  }
  out.p_auc = (1.0 + ge_auc) / (1.0 + n_perm);
  out.p_topk = (1.0 + ge_topk) / (1.0 + n_perm);
  out.p_spearman = (1.0 + ge_sp) / (1.0 + n_perm);
  out.null_auc_mean = sum_auc / n_perm;
  out.null_topk_mean = sum_topk / n_perm;
  out.null_spearman_mean = sum_sp / n_perm;
  return out;
}

}  // namespace routelens
