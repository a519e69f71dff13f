#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ibvp/cli.hpp"
#include "ibvp/error.hpp"
#include "ibvp/grid.hpp"

using namespace ibvp;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ibvp_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path write_config(const std::string& name, const json& j) {
  const fs::path p = fs::temp_directory_path() / ("ibvp_cli_" + name + ".json");
  std::ofstream(p) << j.dump(2);
  return p;
}

int run(const std::string& cmd, const std::string& preset, const fs::path& out, const std::string& config = "",
        std::string* err_text = nullptr) {
  cli::Invocation inv;
  inv.command = cmd;
  inv.preset = preset;
  inv.out_dir = out.string();
  inv.config_path = config;
  inv.threads = 1;
  std::ostringstream log, err;
  const int code = cli::run(inv, log, err);
  if (err_text) *err_text = err.str();
  return code;
}

json manifest(const fs::path& out) { return json::parse(slurp(out / "manifest.json")); }

}  // namespace

TEST_CASE("every command has presets; unknown names are config errors") {
  for (const auto& c : cli::commands()) CHECK_FALSE(cli::preset_names(c).empty());
  CHECK_THROWS_AS(cli::preset("forward", "nope"), Error);
  cli::Invocation inv;
  inv.command = "teleport";
  CHECK_THROWS_AS(cli::resolve_config(inv), Error);
  std::ostringstream log, err;
  CHECK(cli::run(inv, log, err) == cli::kConfig);
}

TEST_CASE("zero-data forward run emits the zero field and a complete manifest") {
  const fs::path out = scratch("zero");
  REQUIRE(run("forward", "zero", out) == cli::kOk);
  const json m = manifest(out);
  CHECK(m["format"] == "ibvp-run-v1");
  CHECK(m["command"] == "forward");
  CHECK(m["config_hash"] == cli::config_hash(m["config"]));
  CHECK(m["exit_code"] == 0);
  for (const auto& f : m["outputs"]) CHECK(fs::exists(out / f.get<std::string>()));
  const auto& g = m["config"]["grid"];
  const GridPtr G = build_grid(GridSpec::unit(g["dim"], g["nodes"], g["nt"]));
  const Field u = read_field_binary(G, (out / "u.bin").string());
  for (double v : u.values()) CHECK(v == 0.0);
}

TEST_CASE("reruns and manifest replays are byte-identical") {
  const fs::path a = scratch("rep_a"), b = scratch("rep_b"), c = scratch("rep_c");
  REQUIRE(run("forward", "solve", a) == cli::kOk);
  REQUIRE(run("forward", "solve", b) == cli::kOk);
  CHECK(slurp(a / "solve_report.csv") == slurp(b / "solve_report.csv"));
  CHECK(slurp(a / "u.bin") == slurp(b / "u.bin"));
  REQUIRE(run("forward", "", c, (a / "manifest.json").string()) == cli::kOk);
  CHECK(slurp(a / "solve_report.csv") == slurp(c / "solve_report.csv"));
  CHECK(manifest(a)["config_hash"] == manifest(c)["config_hash"]);
  CHECK(slurp(a / "solve_report.csv").rfind("# ibvp-solve-report-v1\n", 0) == 0);
}

TEST_CASE("schema: unknown keys, wrong types and missing seeds are rejected before compute") {
  std::string err;
  const fs::path out = scratch("schema");
  CHECK(run("forward", "zero", out, write_config("top", {{"bogus", 1}}).string(), &err) == cli::kConfig);
  CHECK(err.find("unknown key 'bogus'") != std::string::npos);
  CHECK_FALSE(fs::exists(out));
  CHECK(run("forward", "zero", out, write_config("nested", {{"grid", {{"spacing", 2}}}}).string(), &err) ==
        cli::kConfig);
  CHECK(err.find("grid") != std::string::npos);
  CHECK(run("forward", "zero", out, write_config("type", {{"grid", {{"nodes", "many"}}}}).string()) == cli::kConfig);
  CHECK(run("forward", "zero", out, write_config("field", {{"forward", {{"datum", {{"kind", "spiral"}}}}}}).string()) ==
        cli::kConfig);
  // a block belonging to another command is unknown here
  CHECK(run("forward", "zero", out, write_config("other", {{"go", {{"y", {-1, 0}}}}}).string()) == cli::kConfig);
  CHECK(run("gauge-demo", "S", out, write_config("noseed", {{"seed", nullptr}}).string(), &err) == cli::kConfig);
  CHECK(err.find("seed") != std::string::npos);
  CHECK(run("forward", "zero", out, (out / "missing.json").string()) == cli::kConfig);
}

TEST_CASE("seed flag overrides the config and changes the ensemble") {
  cli::Invocation inv;
  inv.command = "gauge-demo";
  inv.preset = "S";
  inv.seed = 7;
  CHECK(cli::resolve_config(inv)["seed"] == 7);
  inv.seed.reset();
  CHECK(cli::resolve_config(inv)["seed"] == 20240601);
}

TEST_CASE("solver failure exits with 3") {
  const json cfg = {{"grid", {{"nodes", 9}, {"nt", 21}}},
                    {"model", {{"type", "polynomial"}, {"coeffs", {0, 0, -1}}}},
                    {"forward", {{"datum", 200.0}}}};
  std::string err;
  CHECK(run("forward", "solve", scratch("blow"), write_config("blow", cfg).string(), &err) == cli::kSolver);
  CHECK(err.find("solver") != std::string::npos);
}

TEST_CASE("blow-up sweep reports a threshold") {
  const fs::path out = scratch("blowup");
  REQUIRE(run("forward", "blowup", out) == cli::kOk);
  CHECK(manifest(out)["summary"]["lambda_star"].get<double>() > 1.0);
}

TEST_CASE("budget exhaustion exits with 5") {
  const json cfg = {{"reconstruct", {{"budget", 5}}}};
  CHECK(run("reconstruct", "linear-pair", scratch("budget"), write_config("budget", cfg).string()) == cli::kBudget);
}

TEST_CASE("a violated hypothesis exits with 4 and still writes the estimate") {
  // linear d declared quadratic: the leading coefficient vanishes
  const json cfg = {{"model", {{"coeffs", {0, 1}}}}, {"inverse-source", {{"N", 2}, {"K", 2}}}};
  const fs::path out = scratch("hyp");
  CHECK(run("inverse-source", "linear", out, write_config("hyp", cfg).string()) == cli::kHypothesis);
  CHECK(manifest(out)["summary"]["verdict"] == "hypotheses-violated");
  CHECK(fs::exists(out / "estimate.json"));
}

TEST_CASE("gauge demo: discrepancy table with fitted orders") {
  const json cfg = {{"gauge-demo", {{"levels", {9, 17}}}}};
  const fs::path out = scratch("gauge");
  REQUIRE(run("gauge-demo", "S", out, write_config("gauge", cfg).string()) == cli::kOk);
  const std::string csv = slurp(out / "gauge_refinement.csv");
  CHECK(csv.find("profile,nodes,h,sup,l2,flux_scale,relative") != std::string::npos);
  for (const auto& o : manifest(out)["summary"]["orders"]) CHECK(o.get<double>() >= 1.0);
}

TEST_CASE("linearize, go and carleman presets run") {
  const fs::path lin = scratch("lin");
  REQUIRE(run("linearize", "cross-route", lin) == cli::kOk);
  CHECK(manifest(lin)["summary"]["slope_top"].get<double>() >= 1.9);
  CHECK(fs::exists(lin / "direct" / "manifest.json"));

  const fs::path go = scratch("go");
  const json gcfg = {{"grid", {{"nodes", 33}, {"nt", 33}}}, {"go", {{"taus", {8, 16, 32}}}}};
  REQUIRE(run("go", "decay", go, write_config("go", gcfg).string()) == cli::kOk);
  CHECK(manifest(go)["summary"]["slope_l2"].get<double>() < 0.0);

  const fs::path car = scratch("car");
  REQUIRE(run("carleman", "sweep", car) == cli::kOk);
  CHECK(fs::exists(car / "carleman.csv"));
}

TEST_CASE("argument parsing: subcommand flags and bad usage") {
  const fs::path out = scratch("argv");
  const std::string o = out.string();
  const char* good[] = {"ibvp", "forward", "--preset", "zero", "--out", o.c_str(), "--threads", "2", "--seed", "3"};
  CHECK(cli::main(10, const_cast<char**>(good)) == cli::kOk);
  CHECK(manifest(out)["seed"] == 3);
  const char* bad[] = {"ibvp", "forward", "--frobnicate"};
  CHECK(cli::main(3, const_cast<char**>(bad)) == cli::kConfig);
  const char* none[] = {"ibvp"};
  CHECK(cli::main(1, const_cast<char**>(none)) == cli::kConfig);
}
