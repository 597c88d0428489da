#pragma once

#include <stdexcept>
#include <string>

namespace stablelink {

// Domain error codes. The names mirror the error tokens used throughout the
// CLI and the on-disk formats documentation.
enum class Errc {
  Syntax,
  Invariant,
  AlreadyManaging,
  NotManaging,
  EpochLocked,
  MissingDependency,
  MaterializationFailed,
  NotExecutable,
  Unresolved,
  UuidCollision,
  UuidMismatch,
  Bounds,
  Ambiguous,
  Exhausted,
  StaleTables,
  SymbolNotExported,
  NoMatch,
  UnknownObject,
  Corrupt,
  Io,
};

const char* errc_name(Errc code);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code) {}

  Errc code() const { return code_; }

 private:
  Errc code_;
};

}  // namespace stablelink
