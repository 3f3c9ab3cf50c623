#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "routelens/detail/strings.hpp"
#include "routelens/errors.hpp"

namespace routelens {

/// Kind of an endpoint attribute. All kinds except `date` are numeric and
/// participate in quantile statistics.
enum class AttrKind { score, flag, price, tokens, date, rate };

inline bool is_numeric(AttrKind k) { return k != AttrKind::date; }

/// One table cell. `raw` preserves the source text byte-for-byte so the
/// agent-view rendering is stable; `number` is the parsed value with token
/// multipliers (k = 1 000, M = 1 000 000) expanded. Missing cells are "-".
struct AttributeValue {
  std::string raw;
  std::optional<double> number;

  bool missing() const { return !number.has_value(); }
};

struct AttributeSpec {
  std::string name;
  AttrKind kind;
};

/// One row of the model pool. `model_id` and `model` are parsed but excluded
/// from everything the agent sees.
struct Endpoint {
  int id = 0;  // 1-based source row index
  std::string model_id;
  std::string model;
  std::vector<AttributeValue> values;  // aligned with Zoo::schema
};

struct AttributeQuantiles {
  double q25 = 0.0;
  double median = 0.0;
  double q75 = 0.0;
  bool valid = false;  // false when every value is missing or kind is non-numeric
};

namespace detail {

/// The reference column set of the bundled pool: three name/index columns
/// followed by the 34 objective attributes.
inline const std::array<std::pair<const char*, AttrKind>, 34>& attribute_schema() {
  static const std::array<std::pair<const char*, AttrKind>, 34> kSchema = {{
      {"Intelligence", AttrKind::score},
      {"Speed", AttrKind::score},
      {"Text In", AttrKind::flag},
      {"Image In", AttrKind::flag},
      {"Voice In", AttrKind::flag},
      {"Video In", AttrKind::flag},
      {"Text Out", AttrKind::flag},
      {"Image Out", AttrKind::flag},
      {"Audio Out", AttrKind::flag},
      {"Video Out", AttrKind::flag},
      {"Reasoning", AttrKind::flag},
      {"Input Price", AttrKind::price},
      {"Cached Price", AttrKind::price},
      {"Output Price", AttrKind::price},
      {"Context Window", AttrKind::tokens},
      {"Max Output", AttrKind::tokens},
      {"Know. Cutoff", AttrKind::date},
      {"Comp. Endpt", AttrKind::flag},
      {"Resp. Endpt", AttrKind::flag},
      {"Assist. Endpt", AttrKind::flag},
      {"Batch Endpt", AttrKind::flag},
      {"Fine-Tune Endpt", AttrKind::flag},
      {"Streaming", AttrKind::flag},
      {"Func. Calling", AttrKind::flag},
      {"Struct. Output", AttrKind::flag},
      {"Fine-Tuning", AttrKind::flag},
      {"Distillation", AttrKind::flag},
      {"Pred. Outputs", AttrKind::flag},
      {"Rate Lim (Free)", AttrKind::rate},
      {"Rate Lim (T1)", AttrKind::rate},
      {"Rate Lim (T2)", AttrKind::rate},
      {"Rate Lim (T3)", AttrKind::rate},
      {"Rate Lim (T4)", AttrKind::rate},
      {"Rate Lim (T5)", AttrKind::rate},
  }};
  return kSchema;
}

/// Token-count grammar: decimal with optional k/M multiplier suffix.
inline std::optional<double> parse_number(std::string_view cell, bool allow_suffix) {
  std::string s(trim(cell));
  if (s.empty()) return std::nullopt;
  double mult = 1.0;
  if (allow_suffix && (s.back() == 'k' || s.back() == 'M')) {
    mult = s.back() == 'k' ? 1e3 : 1e6;
    s.pop_back();
    if (s.empty()) return std::nullopt;
  }
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    return std::nullopt;
  }
  if (used != s.size()) return std::nullopt;
  return v * mult;
}

}  // namespace detail

/// The endpoint pool. Immutable after load; row order is authoritative for
/// output-mask alignment (mask index m always refers to source row m).
class Zoo {
 public:
  std::vector<AttributeSpec> schema;           // the 34 objective attributes
  std::vector<Endpoint> endpoints;             // source-row order
  std::vector<AttributeQuantiles> quantile_cache;  // aligned with schema

  int size() const { return static_cast<int>(endpoints.size()); }
  int attribute_count() const { return static_cast<int>(schema.size()); }

  int attribute_index(std::string_view name) const {
    for (std::size_t j = 0; j < schema.size(); ++j)
      if (schema[j].name == name) return static_cast<int>(j);
    return -1;
  }

  bool has_attribute(std::string_view name) const { return attribute_index(name) >= 0; }

  const AttributeValue& value(const Endpoint& e, int attr_index) const {
    return e.values[static_cast<std::size_t>(attr_index)];
  }

  const AttributeValue& value(int endpoint_index, int attr_index) const {
    return endpoints[static_cast<std::size_t>(endpoint_index)]
        .values[static_cast<std::size_t>(attr_index)];
  }

  const Endpoint& by_id(int id) const {
    if (id < 1 || id > size()) raise(Errc::config, "no endpoint with id " + std::to_string(id));
    return endpoints[static_cast<std::size_t>(id - 1)];
  }
};

/// Non-missing values of a numeric attribute, in row order.
inline std::vector<double> attribute_values(const Zoo& zoo, int attr_index) {
  std::vector<double> vals;
  for (const auto& e : zoo.endpoints) {
    const auto& v = e.values[static_cast<std::size_t>(attr_index)];
    if (v.number) vals.push_back(*v.number);
  }
  return vals;
}

namespace detail {

/// Nearest-rank quantile: the ceil(q*n)-th order statistic (1-based).
inline double nearest_rank(std::vector<double> vals, double q) {
  std::sort(vals.begin(), vals.end());
  auto n = static_cast<long>(vals.size());
  long k = static_cast<long>(std::ceil(q * static_cast<double>(n)));
  if (k < 1) k = 1;
  if (k > n) k = n;
  return vals[static_cast<std::size_t>(k - 1)];
}

}  // namespace detail

/// q-quantile of a numeric attribute over non-missing values (nearest rank).
inline double attribute_quantile(const Zoo& zoo, std::string_view attr, double q) {
  int j = zoo.attribute_index(attr);
  if (j < 0) raise(Errc::unknown_attribute, std::string(attr));
  if (!is_numeric(zoo.schema[static_cast<std::size_t>(j)].kind))
    raise(Errc::kind_mismatch, "attribute '" + std::string(attr) + "' is not numeric");
  auto vals = attribute_values(zoo, j);
  if (vals.empty())
    raise(Errc::insufficient_data, "attribute '" + std::string(attr) + "' has no values");
  return detail::nearest_rank(std::move(vals), q);
}

inline std::vector<AttributeQuantiles> compute_quantile_cache(const Zoo& zoo) {
  std::vector<AttributeQuantiles> cache(zoo.schema.size());
  for (std::size_t j = 0; j < zoo.schema.size(); ++j) {
    if (!is_numeric(zoo.schema[j].kind)) continue;
    auto vals = attribute_values(zoo, static_cast<int>(j));
    if (vals.empty()) continue;
    cache[j].q25 = detail::nearest_rank(vals, 0.25);
    cache[j].median = detail::nearest_rank(vals, 0.50);
    cache[j].q75 = detail::nearest_rank(vals, 0.75);
    cache[j].valid = true;
  }
  return cache;
}

namespace detail {

inline std::vector<std::string> read_csv_line(const std::string& line) {
  auto cells = split(line, ',');
  for (auto& c : cells) {
    // Tolerate CRLF input.
    if (!c.empty() && c.back() == '\r') c.pop_back();
  }
  return cells;
}

[[noreturn]] inline void cell_error(int row, const std::string& column, const std::string& why) {
  raise(Errc::parse, "row " + std::to_string(row) + ", column '" + column + "': " + why);
}

inline void validate_zoo(const Zoo& zoo) {
  for (std::size_t i = 0; i < zoo.endpoints.size(); ++i) {
    const auto& e = zoo.endpoints[i];
    int row = static_cast<int>(i) + 1;
    if (e.id != row)
      raise(Errc::parse, "row " + std::to_string(row) + ": id " + std::to_string(e.id) +
                             " breaks the 1..M sequence");
    for (std::size_t j = 0; j < zoo.schema.size(); ++j) {
      const auto& spec = zoo.schema[j];
      const auto& v = e.values[j];
      if (v.missing()) continue;
      double x = *v.number;
      switch (spec.kind) {
        case AttrKind::score:
          if (x < 1 || x > 5 || x != std::floor(x))
            cell_error(row, spec.name, "score must be an integer in 1..5");
          break;
        case AttrKind::flag:
          if (x != 0 && x != 1) cell_error(row, spec.name, "flag must be 0 or 1");
          break;
        case AttrKind::price:
          if (x < 0) cell_error(row, spec.name, "price must be >= 0");
          break;
        default:
          break;
      }
    }
    int jc = zoo.attribute_index("Context Window");
    int jm = zoo.attribute_index("Max Output");
    if (jc >= 0 && jm >= 0) {
      const auto& c = e.values[static_cast<std::size_t>(jc)];
      const auto& m = e.values[static_cast<std::size_t>(jm)];
      if (c.missing() || m.missing() || !(*m.number > 0) || !(*c.number >= *m.number))
        cell_error(row, "Context Window", "requires Context Window >= Max Output > 0");
    }
  }
}

}  // namespace detail

/// Parse a pool from zoo-CSV: the exact reference header, "-" for missing
/// cells, token counts with k/M suffixes.
inline Zoo load_zoo(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) raise(Errc::schema_mismatch, "empty input, no header row");
  auto header = detail::read_csv_line(line);

  const auto& attrs = detail::attribute_schema();
  std::vector<std::string> expected = {"id", "model-id", "model"};
  for (const auto& [name, kind] : attrs) expected.emplace_back(name);
  if (header.size() != expected.size()) {
    std::string offending =
        header.size() < expected.size() ? expected[header.size()] : header[expected.size()];
    raise(Errc::schema_mismatch, "header has " + std::to_string(header.size()) +
                                     " columns, expected " + std::to_string(expected.size()) +
                                     " (at column '" + offending + "')");
  }
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (header[i] != expected[i])
      raise(Errc::schema_mismatch,
            "column " + std::to_string(i + 1) + " is '" + header[i] + "', expected '" +
                expected[i] + "'");

  Zoo zoo;
  zoo.schema.reserve(attrs.size());
  for (const auto& [name, kind] : attrs) zoo.schema.push_back({name, kind});

  int row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    ++row;
    auto cells = detail::read_csv_line(line);
    if (cells.size() != expected.size())
      raise(Errc::parse, "row " + std::to_string(row) + ": has " +
                             std::to_string(cells.size()) + " cells, expected " +
                             std::to_string(expected.size()));
    Endpoint e;
    auto id = detail::parse_number(cells[0], false);
    if (!id || *id != std::floor(*id)) detail::cell_error(row, "id", "not an integer");
    e.id = static_cast<int>(*id);
    e.model_id = cells[1];
    e.model = cells[2];
    e.values.reserve(attrs.size());
    for (std::size_t j = 0; j < attrs.size(); ++j) {
      const auto& cell = cells[j + 3];
      AttributeValue v;
      v.raw = cell;
      if (cell != "-") {
        AttrKind kind = attrs[j].second;
        if (kind == AttrKind::date) {
          if (detail::trim(cell).empty()) detail::cell_error(row, attrs[j].first, "empty date");
        } else {
          bool suffix = kind == AttrKind::tokens || kind == AttrKind::rate;
          auto num = detail::parse_number(cell, suffix);
          if (!num) detail::cell_error(row, attrs[j].first, "cannot parse '" + cell + "'");
          v.number = num;
        }
      }
      e.values.push_back(std::move(v));
    }
    zoo.endpoints.push_back(std::move(e));
  }

  if (zoo.size() < 2)
    raise(Errc::degenerate_zoo, "pool has " + std::to_string(zoo.size()) +
                                    " endpoints, need at least 2");
  detail::validate_zoo(zoo);
  zoo.quantile_cache = compute_quantile_cache(zoo);
  return zoo;
}

inline Zoo load_zoo_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::config, "cannot open zoo file '" + path + "'");
  return load_zoo(in);
}

/// Agent-view CSV: source layout minus the `model-id` and `model` columns,
/// byte-stable (cells are echoed from the source text).
inline std::string render_for_agent(const Zoo& zoo) {
  std::ostringstream out;
  out << "id";
  for (const auto& spec : zoo.schema) out << ',' << spec.name;
  out << '\n';
  for (const auto& e : zoo.endpoints) {
    out << e.id;
    for (const auto& v : e.values) out << ',' << v.raw;
    out << '\n';
  }
  return out.str();
}

/// Agent-view CSV row of a single endpoint (no header, no name columns).
inline std::string render_endpoint_row(const Zoo& zoo, const Endpoint& e) {
  std::ostringstream out;
  out << e.id;
  for (const auto& v : e.values) out << ',' << v.raw;
  return out.str();
}

}  // namespace routelens
