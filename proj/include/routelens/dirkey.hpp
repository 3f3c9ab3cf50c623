#pragma once

#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "routelens/detail/strings.hpp"
#include "routelens/errors.hpp"
#include "routelens/zoo.hpp"

namespace routelens {

enum class KeyKind { nf, lf_pd, lf_gd, unrecognized };

inline const char* key_kind_name(KeyKind k) {
  switch (k) {
    case KeyKind::nf: return "NF";
    case KeyKind::lf_pd: return "LF-PD";
    case KeyKind::lf_gd: return "LF-GD";
    case KeyKind::unrecognized: return "UNRECOGNIZED";
  }
  return "?";
}

struct DirectionKey {
  std::string raw;
  KeyKind kind = KeyKind::unrecognized;
};

enum class Relation { less, less_eq, eq, greater_eq, greater };

inline const char* relation_symbol(Relation r) {
  switch (r) {
    case Relation::less: return "<";
    case Relation::less_eq: return "<=";
    case Relation::eq: return "=";
    case Relation::greater_eq: return ">=";
    case Relation::greater: return ">";
  }
  return "?";
}

/// One attribute comparison. The right-hand side is the current endpoint's
/// value of the same attribute, a zoo quantile of it, or a constant.
struct Comparison {
  std::string attribute;
  Relation rel = Relation::less;
  enum class Ref { current, quantile, constant } ref = Ref::current;
  double value = 0.0;  // quantile fraction or constant
};

/// Conjunction of comparisons; total 0/1 evaluation on any endpoint pair.
struct Predicate {
  std::string name;
  std::vector<Comparison> comparisons;

  /// Binary predicates compare against the current endpoint.
  bool binary() const {
    for (const auto& c : comparisons)
      if (c.ref == Comparison::Ref::current) return true;
    return false;
  }
};

enum class SolveMode { shortlist, completeness };

inline const char* solve_mode_name(SolveMode m) {
  return m == SolveMode::shortlist ? "shortlist" : "completeness";
}

struct WeightedPredicate {
  Predicate predicate;
  double weight = 0.0;
};

/// Compiled semantics of a direction key: hard clauses, weighted soft
/// clauses, shortlist budget [L, U] and size penalty.
struct ConstraintSet {
  std::vector<Predicate> hard;
  std::vector<WeightedPredicate> soft;
  int budget_low = 0;
  int budget_high = 0;
  double penalty = 0.0;
  SolveMode mode = SolveMode::shortlist;

  bool vacuous() const { return hard.empty() && soft.empty(); }
};

/// 1 iff every comparison in `p` holds for `candidate` against `current`.
/// Missing values (on either side) make a comparison false; the function is
/// total on any endpoints drawn from a valid zoo.
inline int eval_predicate(const Predicate& p, const Endpoint& candidate,
                          const Endpoint& current, const Zoo& zoo) {
  for (const auto& c : p.comparisons) {
    int j = zoo.attribute_index(c.attribute);
    if (j < 0) return 0;
    const auto& lhs = candidate.values[static_cast<std::size_t>(j)];
    if (lhs.missing()) return 0;
    double rhs;
    switch (c.ref) {
      case Comparison::Ref::current: {
        const auto& cv = current.values[static_cast<std::size_t>(j)];
        if (cv.missing()) return 0;
        rhs = *cv.number;
        break;
      }
      case Comparison::Ref::quantile: {
        try {
          rhs = attribute_quantile(zoo, c.attribute, c.value);
        } catch (const Error&) {
          return 0;
        }
        break;
      }
      case Comparison::Ref::constant:
        rhs = c.value;
        break;
    }
    double x = *lhs.number;
    bool ok = false;
    switch (c.rel) {
      case Relation::less: ok = x < rhs; break;
      case Relation::less_eq: ok = x <= rhs; break;
      case Relation::eq: ok = x == rhs; break;
      case Relation::greater_eq: ok = x >= rhs; break;
      case Relation::greater: ok = x > rhs; break;
    }
    if (!ok) return 0;
  }
  return 1;
}

/// Direction-key grammar and defaults. Loadable from the documented
/// key-value config format (see CompilerConfig::parse).
struct CompilerConfig {
  struct DirectionPattern {
    std::string phrase;  // e.g. "cheaper", "more expensive"
    std::string family;  // soft-clause family for general directions
    bool lower = true;   // direction sense: lower (<current) or higher (>current)
  };
  struct LexiconEntry {
    std::string phrase;     // attribute phrase as it appears in keys
    std::string attribute;  // schema attribute name
  };
  struct SoftRule {
    std::string family;
    std::string attribute;
    double weight = 0.0;
  };

  std::vector<std::string> nf_tokens;  // normalized (lowercase, no trailing punctuation)
  std::vector<DirectionPattern> directions;
  std::vector<LexiconEntry> lexicon;
  std::vector<SoftRule> soft_rules;
  std::vector<std::pair<std::string, std::string>> baseline;  // family -> target attribute
  double penalty = 0.25;
  int budget_low = 1;
  std::optional<int> budget_high;  // default: pool size

  static CompilerConfig defaults();
  static CompilerConfig parse(std::istream& in);

  const std::string* baseline_attribute(std::string_view family) const {
    for (const auto& [f, a] : baseline)
      if (f == family) return &a;
    return nullptr;
  }

  /// Human-readable summary of accepted key forms (for REPL diagnostics).
  std::string accepted_forms() const {
    std::ostringstream out;
    out << "no-feedback tokens:";
    for (const auto& t : nf_tokens) out << " \"" << t << "\"";
    out << "\ndirection words:";
    for (const auto& d : directions) out << " \"" << d.phrase << "\"";
    out << "\nattribute phrases:";
    for (const auto& l : lexicon) out << " \"" << l.phrase << "\"";
    return out.str();
  }
};

namespace detail {

/// Key normalization: lowercase, trimmed, trailing punctuation stripped.
inline std::string normalize_key(std::string_view raw) {
  std::string s = to_lower(trim(raw));
  while (!s.empty() && std::string(".!?,;:").find(s.back()) != std::string::npos) s.pop_back();
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
  return s;
}

}  // namespace detail

inline CompilerConfig CompilerConfig::defaults() {
  CompilerConfig cfg;
  cfg.nf_tokens = {"", "none", "none.", "no feedback", "i don't have any feedback"};
  cfg.directions = {
      {"cheaper", "price", true},
      {"less expensive", "price", true},
      {"more expensive", "price", false},
      {"pricier", "price", false},
      {"faster", "speed", false},
      {"quicker", "speed", false},
      {"slower", "speed", true},
  };
  cfg.lexicon = {
      {"cached input", "Cached Price"},
      {"cached prices", "Cached Price"},
      {"cached price", "Cached Price"},
      {"output prices", "Output Price"},
      {"output price", "Output Price"},
      {"output", "Output Price"},
      {"input prices", "Input Price"},
      {"input price", "Input Price"},
      {"input", "Input Price"},
      {"context window", "Context Window"},
      {"context", "Context Window"},
      {"max output", "Max Output"},
  };
  cfg.soft_rules = {
      {"price", "Output Price", 1.0},
      {"price", "Input Price", 1.0},
      {"price", "Cached Price", 0.5},
      {"speed", "Speed", 1.0},
  };
  cfg.baseline = {{"price", "Output Price"}, {"speed", "Speed"}};
  cfg.penalty = 0.25;
  cfg.budget_low = 1;
  return cfg;
}

/// Config format: one directive per line, '#' comments.
///   nf <token>
///   dir <phrase...> <family> <lower|higher>
///   attr <phrase> = <attribute>
///   gd <family> <attribute...> <weight>
///   baseline <family> <attribute>
///   lambda <value> | budget_low <n> | budget_high <n>
inline CompilerConfig CompilerConfig::parse(std::istream& in) {
  CompilerConfig cfg;
  std::string line;
  int lineno = 0;
  auto bad = [&](const std::string& why) {
    raise(Errc::config, "config line " + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::string body(detail::trim(line));
    if (body.empty()) continue;
    auto space = body.find(' ');
    std::string kw = body.substr(0, space);
    std::string rest = space == std::string::npos ? "" : std::string(detail::trim(body.substr(space + 1)));
    if (kw == "nf") {
      cfg.nf_tokens.push_back(detail::normalize_key(rest));
    } else if (kw == "dir") {
      auto toks = detail::split_whitespace(rest);
      if (toks.size() < 3) bad("dir needs: <phrase...> <family> <lower|higher>");
      std::string sense = toks.back();
      std::string family = toks[toks.size() - 2];
      if (sense != "lower" && sense != "higher") bad("dir sense must be lower or higher");
      std::string phrase;
      for (std::size_t i = 0; i + 2 < toks.size(); ++i) {
        if (i) phrase += ' ';
        phrase += toks[i];
      }
      if (phrase.empty()) bad("dir phrase missing");
      cfg.directions.push_back({detail::to_lower(phrase), family, sense == "lower"});
    } else if (kw == "attr") {
      auto eq = rest.find('=');
      if (eq == std::string::npos) bad("attr needs: <phrase> = <attribute>");
      std::string phrase(detail::trim(rest.substr(0, eq)));
      std::string attribute(detail::trim(rest.substr(eq + 1)));
      if (phrase.empty() || attribute.empty()) bad("attr phrase/attribute missing");
      cfg.lexicon.push_back({detail::to_lower(phrase), attribute});
    } else if (kw == "gd") {
      auto toks = detail::split_whitespace(rest);
      if (toks.size() < 3) bad("gd needs: <family> <attribute...> <weight>");
      auto w = detail::parse_number(toks.back(), false);
      if (!w || *w < 0) bad("gd weight must be a nonnegative number");
      std::string attribute;
      for (std::size_t i = 1; i + 1 < toks.size(); ++i) {
        if (i > 1) attribute += ' ';
        attribute += toks[i];
      }
      cfg.soft_rules.push_back({toks[0], attribute, *w});
    } else if (kw == "baseline") {
      auto toks = detail::split_whitespace(rest);
      if (toks.size() < 2) bad("baseline needs: <family> <attribute...>");
      std::string attribute;
      for (std::size_t i = 1; i < toks.size(); ++i) {
        if (i > 1) attribute += ' ';
        attribute += toks[i];
      }
      cfg.baseline.emplace_back(toks[0], attribute);
    } else if (kw == "lambda") {
      auto v = detail::parse_number(rest, false);
      if (!v || *v < 0) bad("lambda must be a nonnegative number");
      cfg.penalty = *v;
    } else if (kw == "budget_low") {
      auto v = detail::parse_number(rest, false);
      if (!v || *v < 0 || *v != std::floor(*v)) bad("budget_low must be a nonnegative integer");
      cfg.budget_low = static_cast<int>(*v);
    } else if (kw == "budget_high") {
      auto v = detail::parse_number(rest, false);
      if (!v || *v < 0 || *v != std::floor(*v)) bad("budget_high must be a nonnegative integer");
      cfg.budget_high = static_cast<int>(*v);
    } else {
      bad("unknown directive '" + kw + "'");
    }
  }
  if (cfg.nf_tokens.empty()) bad("config defines no nf tokens");
  // The empty key always counts as no feedback.
  cfg.nf_tokens.insert(cfg.nf_tokens.begin(), "");
  return cfg;
}

/// Classifies direction keys and compiles them into constraint sets.
/// Pure given a config; safe to share across threads.
class KeyCompiler {
 public:
  KeyCompiler() : cfg_(CompilerConfig::defaults()) {}
  explicit KeyCompiler(CompilerConfig cfg) : cfg_(std::move(cfg)) {}

  const CompilerConfig& config() const { return cfg_; }

  DirectionKey classify(std::string_view raw) const {
    DirectionKey key;
    key.raw = std::string(raw);
    auto parsed = parse_key(raw);
    key.kind = parsed.kind;
    return key;
  }

  ConstraintSet compile(const DirectionKey& key, const Zoo& zoo, SolveMode mode) const {
    auto parsed = parse_key(key.raw);
    if (parsed.kind == KeyKind::unrecognized)
      raise(Errc::compile, "unrecognized direction key: \"" + key.raw + "\"");

    ConstraintSet cs;
    cs.mode = mode;
    if (mode == SolveMode::completeness) {
      cs.penalty = 0.0;
      cs.budget_low = 0;
      cs.budget_high = zoo.size();
    } else {
      cs.penalty = cfg_.penalty;
      cs.budget_low = cfg_.budget_low;
      cs.budget_high = cfg_.budget_high.value_or(zoo.size());
    }

    if (parsed.kind == KeyKind::nf) return cs;

    const auto& dir = cfg_.directions[static_cast<std::size_t>(parsed.direction)];
    Relation rel = dir.lower ? Relation::less : Relation::greater;

    if (parsed.kind == KeyKind::lf_pd) {
      const std::string& attr = parsed.attribute;
      if (!zoo.has_attribute(attr))
        raise(Errc::unknown_attribute, "key names attribute '" + attr + "' not in the zoo schema");
      cs.hard.push_back(relative_predicate(attr, rel));
      return cs;
    }

    // General direction: the soft family with configured weights.
    for (const auto& rule : cfg_.soft_rules) {
      if (rule.family != dir.family) continue;
      if (!zoo.has_attribute(rule.attribute))
        raise(Errc::unknown_attribute,
              "soft rule names attribute '" + rule.attribute + "' not in the zoo schema");
      cs.soft.push_back({relative_predicate(rule.attribute, rel), rule.weight});
    }
    return cs;
  }

  /// Ground-truth target predicate for scoring recorded runs: the hard clause
  /// for precise keys, the family's baseline attribute for general ones.
  std::optional<Predicate> target_predicate(const DirectionKey& key) const {
    auto parsed = parse_key(key.raw);
    if (parsed.kind == KeyKind::lf_pd) {
      const auto& dir = cfg_.directions[static_cast<std::size_t>(parsed.direction)];
      return relative_predicate(parsed.attribute, dir.lower ? Relation::less : Relation::greater);
    }
    if (parsed.kind == KeyKind::lf_gd) {
      const auto& dir = cfg_.directions[static_cast<std::size_t>(parsed.direction)];
      const std::string* attr = cfg_.baseline_attribute(dir.family);
      if (!attr) return std::nullopt;
      return relative_predicate(*attr, dir.lower ? Relation::less : Relation::greater);
    }
    return std::nullopt;
  }

 private:
  struct ParsedKey {
    KeyKind kind = KeyKind::unrecognized;
    int direction = -1;     // index into cfg_.directions
    std::string attribute;  // resolved schema name (LF-PD only)
  };

  static Predicate relative_predicate(const std::string& attr, Relation rel) {
    Predicate p;
    p.name = attr + " " + relation_symbol(rel) + " current";
    p.comparisons.push_back({attr, rel, Comparison::Ref::current, 0.0});
    return p;
  }

  ParsedKey parse_key(std::string_view raw) const {
    ParsedKey out;
    std::string norm = detail::normalize_key(raw);
    for (const auto& tok : cfg_.nf_tokens) {
      if (norm == detail::normalize_key(tok)) {
        out.kind = KeyKind::nf;
        return out;
      }
    }
    // Longest direction phrase present as a whole word.
    std::size_t best_len = 0;
    for (std::size_t i = 0; i < cfg_.directions.size(); ++i) {
      const auto& d = cfg_.directions[i];
      if (d.phrase.size() > best_len &&
          detail::find_word(norm, d.phrase) != std::string_view::npos) {
        best_len = d.phrase.size();
        out.direction = static_cast<int>(i);
      }
    }
    if (out.direction < 0) return out;  // unrecognized
    // Longest attribute phrase, if any.
    best_len = 0;
    for (const auto& entry : cfg_.lexicon) {
      if (entry.phrase.size() > best_len &&
          detail::find_word(norm, entry.phrase) != std::string_view::npos) {
        best_len = entry.phrase.size();
        out.attribute = entry.attribute;
      }
    }
    out.kind = out.attribute.empty() ? KeyKind::lf_gd : KeyKind::lf_pd;
    return out;
  }

  CompilerConfig cfg_;
};

}  // namespace routelens
