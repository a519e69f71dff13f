#pragma once

#include <stdexcept>
#include <string>

namespace ibvp {

enum class ErrorKind {
  Config,
  Grid,
  Solver,
  Numeric,
  Gauge,
  Hypothesis,
  Budget,
  Truncation,
  Capability,
  Geometry,
  Input
};

const char* to_string(ErrorKind kind);

// Every failure carries the module that raised it and a kind; the CLI maps
// the kind onto its exit code.
class Error : public std::runtime_error {
 public:
  Error(std::string module, ErrorKind kind, const std::string& message);
  const std::string& module() const { return module_; }
  ErrorKind kind() const { return kind_; }
  std::string code() const;

 private:
  std::string module_;
  ErrorKind kind_;
};

[[noreturn]] void fail(const std::string& module, ErrorKind kind, const std::string& message);

inline void require(bool cond, const std::string& module, ErrorKind kind, const std::string& message) {
  if (!cond) fail(module, kind, message);
}

}  // namespace ibvp
