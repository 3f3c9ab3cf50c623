#pragma once

#include <array>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "routelens/detail/strings.hpp"
#include "routelens/dirkey.hpp"
#include "routelens/errors.hpp"

namespace routelens {

/// Normalized binary output mask. `bits` always has length M after
/// processing; `fail_flag` records that the raw reply violated the required
/// format (wrong token count or stray non-binary tokens).
struct OutputMask {
  std::vector<int> bits;
  bool fail_flag = false;
  int source_token_count = 0;  // standalone binary tokens found in the reply

  int popcount() const { return std::accumulate(bits.begin(), bits.end(), 0); }
};

enum class Outcome { zero, one, case_s, all };

inline const char* outcome_name(Outcome o) {
  switch (o) {
    case Outcome::zero: return "ZERO";
    case Outcome::one: return "ONE";
    case Outcome::case_s: return "CASE_S";
    case Outcome::all: return "ALL";
  }
  return "?";
}

inline std::optional<Outcome> outcome_from_name(std::string_view s) {
  if (s == "ZERO") return Outcome::zero;
  if (s == "ONE") return Outcome::one;
  if (s == "CASE_S") return Outcome::case_s;
  if (s == "ALL") return Outcome::all;
  return std::nullopt;
}

struct Postcondition {
  Outcome label = Outcome::zero;
  bool fail_flag = false;
};

/// Normalizes a raw agent reply: keep whitespace-delimited tokens that are
/// exactly "0" or "1", pad with zeros below M, truncate above M. Total on any
/// input; garbage yields an all-zero mask with the fail flag set.
inline OutputMask process_mask(std::string_view raw, int endpoint_count) {
  OutputMask mask;
  bool non_binary = false;
  std::vector<int> bits;
  for (const auto& tok : detail::split_whitespace(raw)) {
    if (tok == "0")
      bits.push_back(0);
    else if (tok == "1")
      bits.push_back(1);
    else
      non_binary = true;
  }
  mask.source_token_count = static_cast<int>(bits.size());
  mask.fail_flag = non_binary || static_cast<int>(bits.size()) != endpoint_count;
  if (static_cast<int>(bits.size()) > endpoint_count)
    bits.resize(static_cast<std::size_t>(endpoint_count));
  while (static_cast<int>(bits.size()) < endpoint_count) bits.push_back(0);
  mask.bits = std::move(bits);
  return mask;
}

/// Label by cardinality only; failed replies carry their flag through but the
/// label always reads the normalized bits. Case S is never split into
/// Some/Random here (that requires the implicit-prior analysis).
inline Postcondition classify(const OutputMask& mask) {
  Postcondition pc;
  pc.fail_flag = mask.fail_flag;
  int n = mask.popcount();
  int m_count = static_cast<int>(mask.bits.size());
  if (n == 0)
    pc.label = Outcome::zero;
  else if (n == 1)
    pc.label = Outcome::one;
  else if (n == m_count)
    pc.label = Outcome::all;
  else
    pc.label = Outcome::case_s;
  return pc;
}

/// Coverage and precision against a ground-truth target set.
/// Precision is undefined (nullopt) for an empty output set; coverage against
/// an empty target is an error the caller must avoid.
struct CoveragePrecision {
  double coverage = 0.0;
  std::optional<double> precision;
};

inline CoveragePrecision coverage_precision(const OutputMask& mask,
                                            const std::vector<int>& target) {
  if (target.size() != mask.bits.size())
    raise(Errc::config, "target length " + std::to_string(target.size()) +
                            " does not match mask length " + std::to_string(mask.bits.size()));
  int t = 0, c = 0, inter = 0;
  for (std::size_t m = 0; m < target.size(); ++m) {
    t += target[m] ? 1 : 0;
    c += mask.bits[m] ? 1 : 0;
    inter += (target[m] && mask.bits[m]) ? 1 : 0;
  }
  if (t == 0) raise(Errc::undefined_coverage, "coverage requested against an empty target set");
  CoveragePrecision out;
  out.coverage = static_cast<double>(inter) / static_cast<double>(t);
  if (c > 0) out.precision = static_cast<double>(inter) / static_cast<double>(c);
  return out;
}

/// Outcome tally grouped by direction key, percentages over per-key totals.
struct TallyRow {
  std::string key;
  std::array<int, 4> counts{};  // indexed by Outcome
  int total = 0;

  double pct(Outcome o) const {
    return total == 0 ? 0.0
                      : 100.0 * counts[static_cast<std::size_t>(o)] / static_cast<double>(total);
  }
};

inline std::vector<TallyRow> tally_outcomes(
    const std::vector<std::pair<DirectionKey, Postcondition>>& runs) {
  std::map<std::string, TallyRow> by_key;
  for (const auto& [key, pc] : runs) {
    auto& row = by_key[key.raw];
    row.key = key.raw;
    row.counts[static_cast<std::size_t>(pc.label)] += 1;
    row.total += 1;
  }
  std::vector<TallyRow> out;
  out.reserve(by_key.size());
  for (auto& [k, row] : by_key) out.push_back(std::move(row));
  return out;
}

}  // namespace routelens
