#include "ibvp/error.hpp"

namespace ibvp {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Grid: return "grid";
    case ErrorKind::Solver: return "solver";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Gauge: return "gauge";
    case ErrorKind::Hypothesis: return "hypothesis";
    case ErrorKind::Budget: return "budget";
    case ErrorKind::Truncation: return "truncation";
    case ErrorKind::Capability: return "capability";
    case ErrorKind::Geometry: return "geometry";
    case ErrorKind::Input: return "input";
  }
  return "unknown";
}

Error::Error(std::string module, ErrorKind kind, const std::string& message)
    : std::runtime_error(module + "." + to_string(kind) + ": " + message),
      module_(std::move(module)),
      kind_(kind) {}

std::string Error::code() const { return module_ + "." + to_string(kind_); }

void fail(const std::string& module, ErrorKind kind, const std::string& message) {
  throw Error(module, kind, message);
}

}  // namespace ibvp
