#include <filesystem>
#include <fstream>

#include "ibvp/error.hpp"
#include "ibvp/models.hpp"
#include "json.hpp"

namespace ibvp {

namespace {
constexpr const char* kMod = "models";
namespace fs = std::filesystem;
using nlohmann::json;

std::string dump_field(const Field& f, const fs::path& dir, const std::string& name) {
  const std::string file = name + ".bin";
  write_field_binary(f, (dir / file).string());
  return file;
}

json mu_json(const MuFunction& fn) { return json{{"kind", fn.name()}, {"coeffs", fn.coeffs}}; }

MuFunction mu_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "series") return MuFunction::series(j.at("coeffs").get<std::vector<double>>());
  if (kind == "sin") return MuFunction::sin();
  if (kind == "cos") return MuFunction::cos();
  if (kind == "exp") return MuFunction::exp();
  fail(kMod, ErrorKind::Input, "unknown mu function kind " + kind);
}
}  // namespace

void write_model_json(const NonlinearityModel& b, const std::string& dir_s, const std::string& name) {
  fs::path dir(dir_s);
  fs::create_directories(dir);
  json j;
  j["variant"] = b.tag();
  const auto& spec = b.grid()->spec();
  j["grid"] = {{"n", spec.n}, {"nt", spec.nt}, {"T", spec.T}, {"nodes", spec.nodes}};
  json fields = json::array();
  for (std::size_t k = 0; k < b.coeffs().size(); ++k)
    fields.push_back(dump_field(b.coeffs()[k], dir, name + "_c" + std::to_string(k)));
  j["coeffs"] = fields;
  if (b.variant() == NonlinearityModel::Variant::TabulatedSeries)
    j["center"] = dump_field(b.center(), dir, name + "_center");
  if (b.variant() == NonlinearityModel::Variant::Separated ||
      b.variant() == NonlinearityModel::Variant::SeparatedSpatial) {
    j["b0"] = dump_field(b.b0(), dir, name + "_b0");
    j["b1"] = dump_field(b.b1(), dir, name + "_b1");
    j["b2"] = dump_field(b.b2(), dir, name + "_b2");
    json terms = json::array();
    for (const auto& t : b.terms()) terms.push_back({{"factor", t.factor}, {"fn", mu_json(t.fn)}});
    j["terms"] = terms;
  }
  std::ofstream os(dir / (name + ".json"));
  require(os.good(), kMod, ErrorKind::Input, "cannot write model file");
  os << j.dump(2) << '\n';
}

NonlinearityModel read_model_json(const GridPtr& grid, const std::string& path) {
  std::ifstream is(path);
  require(is.good(), kMod, ErrorKind::Input, "cannot open model file " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    fail(kMod, ErrorKind::Input, std::string("malformed model file: ") + e.what());
  }
  const fs::path dir = fs::path(path).parent_path();
  auto load = [&](const json& ref) { return read_field_binary(grid, (dir / ref.get<std::string>()).string()); };
  const std::string variant = j.at("variant").get<std::string>();
  std::vector<Field> coeffs;
  for (const auto& r : j.value("coeffs", json::array())) coeffs.push_back(load(r));
  if (variant == "Polynomial") return NonlinearityModel::polynomial(grid, std::move(coeffs));
  if (variant == "TabulatedSeries") return NonlinearityModel::tabulated(grid, load(j.at("center")), std::move(coeffs));
  if (variant == "Separated" || variant == "SeparatedSpatial") {
    std::vector<SeparableTerm> terms;
    for (const auto& t : j.at("terms"))
      terms.push_back({t.at("factor").get<std::vector<double>>(), mu_from_json(t.at("fn"))});
    if (variant == "Separated")
      return NonlinearityModel::separated(grid, load(j.at("b0")), load(j.at("b1")), load(j.at("b2")),
                                          std::move(terms));
    return NonlinearityModel::separated_spatial(grid, load(j.at("b0")), load(j.at("b1")), load(j.at("b2")),
                                                std::move(terms));
  }
  fail(kMod, ErrorKind::Input, "unknown model variant " + variant);
}

}  // namespace ibvp
