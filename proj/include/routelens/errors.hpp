#pragma once

#include <stdexcept>
#include <string>

namespace routelens {

/// Error categories surfaced by the library. The CLI maps these onto
/// process exit codes (config/usage -> 1, data/integrity -> 2, transport -> 3).
enum class Errc {
  schema_mismatch,
  parse,
  degenerate_zoo,
  kind_mismatch,
  insufficient_data,
  compile,
  unknown_attribute,
  size_guard,
  undefined_coverage,
  undefined_auc,
  undefined_correlation,
  fold_count,
  conditioning,
  transport,
  status,
  config,
  integrity,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::schema_mismatch: return "schema-mismatch";
    case Errc::parse: return "parse";
    case Errc::degenerate_zoo: return "degenerate-zoo";
    case Errc::kind_mismatch: return "kind-mismatch";
    case Errc::insufficient_data: return "insufficient-data";
    case Errc::compile: return "compile";
    case Errc::unknown_attribute: return "unknown-attribute";
    case Errc::size_guard: return "size-guard";
    case Errc::undefined_coverage: return "undefined-coverage";
    case Errc::undefined_auc: return "undefined-auc";
    case Errc::undefined_correlation: return "undefined-correlation";
    case Errc::fold_count: return "fold-count";
    case Errc::conditioning: return "conditioning";
    case Errc::transport: return "transport";
    case Errc::status: return "status";
    case Errc::config: return "config";
    case Errc::integrity: return "integrity";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace routelens
