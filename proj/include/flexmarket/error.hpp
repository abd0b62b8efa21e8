#pragma once

#include <stdexcept>
#include <string>

namespace flexmarket {

/// Failure categories. The CLI maps them onto process exit codes.
enum class ErrorKind {
  contract,        // dimension or precondition misuse by the caller
  structure,       // malformed network or attachment data
  domain,          // argument outside a function's domain
  schema,          // input file does not follow its schema
  reference,       // dangling id between input files
  game_condition,  // existence / step-size condition violated
  solver,          // numerical solve failed or was infeasible
  degenerate,      // instance has no meaningful answer (e.g. zero cost)
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::contract: return "contract";
    case ErrorKind::structure: return "structure";
    case ErrorKind::domain: return "domain";
    case ErrorKind::schema: return "schema";
    case ErrorKind::reference: return "reference";
    case ErrorKind::game_condition: return "game-condition";
    case ErrorKind::solver: return "solver";
    case ErrorKind::degenerate: return "degenerate";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) throw Error(kind, what);
}

}  // namespace flexmarket
