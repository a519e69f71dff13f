#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

namespace ibvp::cli {

// Exit codes of the binary.
enum Exit : int { kOk = 0, kConfig = 2, kSolver = 3, kHypothesis = 4, kBudget = 5 };

struct Invocation {
  std::string command;
  std::string config_path;   // JSON config, or a manifest.json of an earlier run
  std::string out_dir = "out";
  std::string preset;
  int threads = 0;           // 0: hardware concurrency
  std::optional<std::uint64_t> seed;
};

const std::vector<std::string>& commands();
std::vector<std::string> preset_names(const std::string& command);
nlohmann::json preset(const std::string& command, const std::string& name);

// Preset (or the command's default preset when neither is given), merge-patched
// with the config file, then --seed.
nlohmann::json resolve_config(const Invocation& inv);

// FNV-1a 64 over the compact dump of the resolved config.
std::string config_hash(const nlohmann::json& config);

// Validates the whole config, then runs. Returns the exit code; errors are
// reported on `err` with their module-qualified code.
int run(const Invocation& inv, std::ostream& log, std::ostream& err);

// Parses argv (CLI11) and runs.
int main(int argc, char** argv);

}  // namespace ibvp::cli
