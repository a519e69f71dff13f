#include "ibvp/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "ibvp/carleman.hpp"
#include "ibvp/error.hpp"
#include "ibvp/go.hpp"
#include "ibvp/linearization.hpp"
#include "ibvp/recovery.hpp"

namespace ibvp::cli {

namespace {

constexpr const char* kMod = "cli";
constexpr const char* kVersion = "1.0.0";
constexpr const char* kManifestFormat = "ibvp-run-v1";
namespace fs = std::filesystem;
using nlohmann::json;
using Fn = std::function<double(double, const Point&)>;

[[noreturn]] void bad(const std::string& path, const std::string& msg) {
  fail(kMod, ErrorKind::Config, (path.empty() ? "" : path + ": ") + msg);
}

// Reader over a JSON object that records the keys it was asked for; finish()
// rejects everything else.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) bad(path_, "expected an object");
  }
  bool has(const std::string& k) {
    seen_.insert(k);
    return j_.contains(k);
  }
  const json& at(const std::string& k) {
    if (!has(k)) bad(path_, "missing key '" + k + "'");
    return j_.at(k);
  }
  template <class T>
  T get(const std::string& k, T def) {
    return has(k) ? convert<T>(j_.at(k), sub_path(k)) : def;
  }
  template <class T>
  T req(const std::string& k) {
    return convert<T>(at(k), sub_path(k));
  }
  Obj obj(const std::string& k) { return Obj(at(k), sub_path(k)); }
  std::string sub_path(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }
  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) bad(path_, "unknown key '" + k + "'");
  }

  template <class T>
  static T convert(const json& v, const std::string& path) {
    try {
      return v.get<T>();
    } catch (const json::exception&) {
      bad(path, "wrong type");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

// Spec parsing ------------------------------------------------------------------

struct GridCfg {
  int dim = 2, nodes = 17, nt = 17;
  double T = 1.0;
  GridSpec spec() const { return GridSpec::unit(dim, nodes, nt, T); }
};

GridCfg parse_grid(Obj o) {
  GridCfg g;
  g.dim = o.get("dim", g.dim);
  g.nodes = o.get("nodes", g.nodes);
  g.nt = o.get("nt", g.nt);
  g.T = o.get("T", g.T);
  o.finish();
  if (g.dim < 1 || g.dim > 3) bad("grid.dim", "must be 1, 2 or 3");
  if (g.nodes < 3 || g.nt < 3) bad("grid", "need at least 3 nodes per axis and 3 time levels");
  if (!(g.T > 0.0)) bad("grid.T", "must be positive");
  return g;
}

Point point(const json& j, const std::string& path) {
  const auto v = Obj::convert<std::vector<double>>(j, path);
  if (v.empty() || v.size() > 3) bad(path, "expected 1 to 3 coordinates");
  Point p{0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < v.size(); ++i) p[i] = v[i];
  return p;
}

// Scalar field of (t, x): a number or {"kind": ...}.
Fn parse_fn(const json& j, const std::string& path) {
  if (j.is_number()) {
    const double c = j.get<double>();
    return [c](double, const Point&) { return c; };
  }
  Obj o(j, path);
  const std::string kind = o.req<std::string>("kind");
  constexpr double pi = std::numbers::pi;
  Fn f;
  if (kind == "constant") {
    const double c = o.req<double>("value");
    f = [c](double, const Point&) { return c; };
  } else if (kind == "affine") {
    const double base = o.get("base", 0.0), tc = o.get("t", 0.0);
    const Point grad = o.has("grad") ? point(o.at("grad"), o.sub_path("grad")) : Point{0.0, 0.0, 0.0};
    f = [=](double t, const Point& x) { return base + grad[0] * x[0] + grad[1] * x[1] + grad[2] * x[2] + tc * t; };
  } else if (kind == "gauss") {
    const double base = o.get("base", 0.0), amp = o.get("amp", 1.0), w = o.get("width", 0.05);
    const Point c = point(o.at("center"), o.sub_path("center"));
    if (!(w > 0.0)) bad(o.sub_path("width"), "must be positive");
    f = [=](double, const Point& x) {
      const double r2 = (x[0] - c[0]) * (x[0] - c[0]) + (x[1] - c[1]) * (x[1] - c[1]) + (x[2] - c[2]) * (x[2] - c[2]);
      return base + amp * std::exp(-r2 / w);
    };
  } else if (kind == "sinprod") {
    const double base = o.get("base", 0.0), amp = o.get("amp", 1.0);
    const int dim = o.get("dim", 2);
    f = [=](double, const Point& x) {
      double p = 1.0;
      for (int i = 0; i < dim; ++i) p *= std::sin(pi * x[i]);
      return base + amp * p;
    };
  } else if (kind == "bump") {
    // amp t^p prod sin^2(pi x_i): vanishes with its normal derivative on the box
    const double amp = o.get("amp", 1.0);
    const int p = o.get("time_power", 1), dim = o.get("dim", 2);
    f = [=](double t, const Point& x) {
      double v = amp * std::pow(t, p);
      for (int i = 0; i < dim; ++i) v *= std::sin(pi * x[i]) * std::sin(pi * x[i]);
      return v;
    };
  } else {
    bad(path, "unknown field kind '" + kind + "'");
  }
  o.finish();
  return f;
}

// Boundary datum: "zero", or a field spec times t^time_power (default 2).
struct DatumCfg {
  bool zero = true;
  int time_power = 2;
  Fn f;
  BoundaryField build(const GridPtr& g) const {
    if (zero) return BoundaryField(g, 0.0);
    return sample_boundary(g, [this](double t, const Point& x) { return std::pow(t, time_power) * f(t, x); });
  }
};

DatumCfg parse_datum(const json& j, const std::string& path) {
  DatumCfg d;
  if (j.is_string()) {
    if (j.get<std::string>() != "zero") bad(path, "only \"zero\" is a named datum");
    return d;
  }
  json rest = j;
  if (rest.is_object() && rest.contains("time_power")) {
    d.time_power = Obj::convert<int>(rest["time_power"], path + ".time_power");
    if (d.time_power < 2) bad(path + ".time_power", "data must vanish to second order at t = 0");
    rest.erase("time_power");
  }
  d.zero = false;
  d.f = parse_fn(rest, path);
  return d;
}

struct CoefCfg {
  bool identity = true;
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  Fn rho = [](double, const Point&) { return 1.0; };
  bool rho_unit = true;
};

CoefCfg parse_coefficients(Obj o) {
  CoefCfg c;
  if (o.has("a")) {
    const json& a = o.at("a");
    if (a.is_string()) {
      if (a.get<std::string>() != "identity") bad("coefficients.a", "expected \"identity\" or a matrix");
    } else {
      const auto rows = Obj::convert<std::vector<std::vector<double>>>(a, "coefficients.a");
      c.identity = false;
      for (std::size_t i = 0; i < rows.size() && i < 3; ++i)
        for (std::size_t k = 0; k < rows[i].size() && k < 3; ++k) c.m(i, k) = rows[i][k];
    }
  }
  if (o.has("rho")) {
    c.rho = parse_fn(o.at("rho"), "coefficients.rho");
    c.rho_unit = o.at("rho").is_number() && o.at("rho").get<double>() == 1.0;
  }
  o.finish();
  return c;
}

struct Coefs {
  MatrixCoefficient a;
  Field rho;
};

Coefs build_coefs(const CoefCfg& c, const GridPtr& g) {
  Coefs k;
  k.a = c.identity ? MatrixCoefficient::identity(g) : MatrixCoefficient::constant(g, c.m);
  k.rho = sample(g, c.rho);
  return k;
}

GaugeProfile parse_profile(Obj o) {
  GaugeProfile p;
  p.amplitude = o.get("amplitude", p.amplitude);
  p.time_power = o.get("time_power", p.time_power);
  if (o.has("tilt")) p.tilt = point(o.at("tilt"), o.sub_path("tilt"));
  o.finish();
  return p;
}

// Polynomial (or zero) model, optionally replaced by S_phi of itself.
struct ModelCfg {
  std::vector<Fn> coeffs;   // empty: zero model
  std::optional<GaugeProfile> gauge;
  NonlinearityModel build(const GridPtr& g, const Coefs& c) const {
    if (coeffs.empty()) return NonlinearityModel::zero(g);
    std::vector<Field> cs;
    for (const auto& f : coeffs) cs.push_back(sample(g, f));
    NonlinearityModel b = NonlinearityModel::polynomial(g, std::move(cs));
    if (gauge) b = apply_S(make_gauge(g, *gauge, c.a), b, c.a, c.rho);
    return b;
  }
};

ModelCfg parse_model(Obj o) {
  ModelCfg m;
  const std::string type = o.req<std::string>("type");
  if (type == "polynomial") {
    const json& cs = o.at("coeffs");
    if (!cs.is_array() || cs.empty()) bad(o.sub_path("coeffs"), "expected a nonempty array");
    for (std::size_t i = 0; i < cs.size(); ++i)
      m.coeffs.push_back(parse_fn(cs[i], o.sub_path("coeffs") + "[" + std::to_string(i) + "]"));
  } else if (type != "zero") {
    bad(o.sub_path("type"), "expected \"polynomial\" or \"zero\"");
  }
  if (o.has("gauge")) m.gauge = parse_profile(o.obj("gauge"));
  o.finish();
  return m;
}

template <class T>
std::vector<T> list(Obj& o, const std::string& k, std::vector<T> def) {
  auto v = o.get(k, def);
  if (v.empty()) bad(o.sub_path(k), "must not be empty");
  return v;
}

// Output ------------------------------------------------------------------------

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

class Csv {
 public:
  Csv(const fs::path& p, const std::string& kind, const std::string& header) : os_(p) {
    require(os_.good(), kMod, ErrorKind::Input, "cannot write " + p.string());
    os_ << "# ibvp-" << kind << "-v1\n" << header << '\n';
  }
  template <class... A>
  void row(const A&... a) {
    std::size_t i = 0;
    ((os_ << (i++ ? "," : "") << cell(a)), ...);
    os_ << '\n';
  }
  void comment(const std::string& s) { os_ << "# " << s << '\n'; }

 private:
  static std::string cell(double v) { return num(v); }
  static std::string cell(int v) { return std::to_string(v); }
  static std::string cell(std::size_t v) { return std::to_string(v); }
  static std::string cell(bool v) { return v ? "1" : "0"; }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(const char* v) { return v; }
  std::ofstream os_;
};

struct Ctx {
  fs::path out;
  int threads = 1;
  std::uint64_t seed = 0;
  bool has_seed = false;
  std::ostream* log = nullptr;
  std::vector<std::string> outputs;
  json summary = json::object();
  int status = kOk;
  fs::path file(const std::string& name) {
    outputs.push_back(name);
    return out / name;
  }
  std::string dir(const std::string& name) {
    outputs.push_back(name + "/");
    return (out / name).string();
  }
};

void need_seed(const Ctx& c, const char* what) {
  if (!c.has_seed) bad("seed", std::string("a seed is mandatory for ") + what);
}

double relint(const Field& est, const Field& truth) {
  const auto& g = *truth.grid();
  double num = 0.0, den = 0.0;
  for (int k = 1; k < g.nt(); ++k)
    for (auto s : g.interior_nodes()) {
      const double w = g.omega_weights()[s], d = est.at(k, s) - truth.at(k, s);
      num += w * d * d;
      den += w * truth.at(k, s) * truth.at(k, s);
    }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

// Commands ----------------------------------------------------------------------

using Runner = std::function<void(Ctx&)>;

Runner parse_forward(Obj& root, const GridCfg& grid, const CoefCfg& coef) {
  Obj o = root.obj("forward");
  const std::string mode = o.get<std::string>("mode", "solve");
  const ModelCfg model = parse_model(root.obj("model"));
  if (mode == "solve") {
    const DatumCfg datum = parse_datum(o.has("datum") ? o.at("datum") : json("zero"), "forward.datum");
    std::optional<Fn> src;
    if (o.has("source")) src = parse_fn(o.at("source"), "forward.source");
    o.finish();
    return [=](Ctx& c) {
      const GridPtr G = build_grid(grid.spec());
      const Coefs k = build_coefs(coef, G);
      const Field F = src ? sample(G, *src) : Field(G, 0.0);
      const SolveReport r = solve_ibvp(k.a, k.rho, model.build(G, k), datum.build(G), {}, src ? &F : nullptr);
      Csv csv(c.file("solve_report.csv"), "solve-report", "step,newton_iterations,residual");
      for (std::size_t i = 0; i < r.newton_iterations.size(); ++i)
        csv.row(i + 1, r.newton_iterations[i], i < r.residuals.size() ? r.residuals[i] : 0.0);
      c.summary["converged"] = r.converged;
      if (!r.converged) fail("forward_solver", ErrorKind::Solver, "solve failed: " + r.message);
      write_field_binary(r.u, c.file("u.bin").string());
      c.summary["u_sup"] = sup_norm(r.u);
    };
  }
  if (mode == "manufactured") {
    const auto levels = list<int>(o, "levels", {9, 17, 33});
    o.finish();
    if (!coef.identity || !coef.rho_unit) bad("coefficients", "the manufactured solution assumes a = Id, rho = 1");
    if (grid.dim != 2) bad("grid.dim", "the manufactured solution is two-dimensional");
    return [=](Ctx& c) {
      constexpr double pi = std::numbers::pi;
      Csv csv(c.file("convergence.csv"), "convergence", "nodes,h,dt,sup_error,order");
      double prev = 0.0;
      std::vector<double> hs, es;
      for (int n : levels) {
        const GridPtr G = build_grid(GridSpec::unit(2, n, n, grid.T));
        const Coefs k = build_coefs(coef, G);
        const NonlinearityModel b = model.build(G, k);
        auto exact = [](double t, const Point& x) { return t * std::sin(pi * x[0]) * std::sin(pi * x[1]); };
        const Field U = sample(G, exact);
        Field F(G, 0.0);
        for (int l = 0; l < G->nt(); ++l)
          for (std::size_t s = 0; s < G->spatial_size(); ++s) {
            const Point x = G->x(s);
            const double sx = std::sin(pi * x[0]) * std::sin(pi * x[1]);
            F.at(l, s) = sx + 2.0 * pi * pi * U.at(l, s) + b.eval(l, s, U.at(l, s), 0);
          }
        const SolveReport r = solve_ibvp(k.a, k.rho, b, BoundaryField(G, 0.0), {}, &F);
        if (!r.converged) fail("forward_solver", ErrorKind::Solver, "manufactured solve failed: " + r.message);
        const double e = sup_norm(r.u - U);
        csv.row(n, G->h(0), G->dt(), e, prev > 0.0 ? std::log2(prev / e) : 0.0);
        prev = e;
        hs.push_back(G->h(0));
        es.push_back(e);
      }
      c.summary["order"] = loglog_slope(hs, es);
      csv.comment("fitted_order," + num(loglog_slope(hs, es)));
    };
  }
  if (mode == "blowup") {
    const DatumCfg datum = parse_datum(o.has("datum") ? o.at("datum") : json("zero"), "forward.datum");
    const auto lambdas = list<double>(o, "lambdas", {1, 2, 4, 8, 16, 32, 64});
    o.finish();
    return [=](Ctx& c) {
      const GridPtr G = build_grid(grid.spec());
      const Coefs k = build_coefs(coef, G);
      const NonlinearityModel b = model.build(G, k);
      const BoundaryField f = datum.build(G);
      SolveOptions so;
      so.homotopy.clear();
      Csv csv(c.file("blowup.csv"), "blowup", "lambda,converged,newton_total");
      double star = 0.0;
      for (double lam : lambdas) {
        const SolveReport r = solve_ibvp(k.a, k.rho, b, lam * f, so);
        csv.row(lam, r.converged, r.total_newton());
        if (!r.converged) {
          star = lam;
          break;
        }
      }
      csv.comment("lambda_star," + num(star));
      c.summary["lambda_star"] = star;
    };
  }
  bad("forward.mode", "expected solve, manufactured or blowup");
}

Runner parse_gauge_demo(Obj& root, const GridCfg& grid, const CoefCfg& coef) {
  Obj o = root.obj("gauge-demo");
  const std::string variant = o.get<std::string>("variant", "S");
  if (variant != "S" && variant != "U") bad("gauge-demo.variant", "expected S or U");
  const ModelCfg model = parse_model(root.obj("model"));
  std::optional<Fn> F;
  if (variant == "U") F = parse_fn(o.at("source"), "gauge-demo.source");
  const auto levels = list<int>(o, "levels", {9, 17, 33});
  std::vector<GaugeProfile> profiles;
  const json& pj = o.at("profiles");
  if (!pj.is_array() || pj.empty()) bad("gauge-demo.profiles", "expected a nonempty array");
  for (std::size_t i = 0; i < pj.size(); ++i)
    profiles.push_back(parse_profile(Obj(pj[i], "gauge-demo.profiles[" + std::to_string(i) + "]")));
  EnsembleSpec es;
  if (o.has("ensemble")) {
    Obj e = o.obj("ensemble");
    es.shapes = e.get("shapes", es.shapes);
    es.amplitudes = e.get("amplitudes", es.amplitudes);
    es.width = e.get("width", es.width);
    e.finish();
  }
  o.finish();
  return [=](Ctx& c) mutable {
    need_seed(c, "the boundary-data ensemble");
    es.seed = c.seed;
    Csv csv(c.file("gauge_refinement.csv"), "gauge-refinement", "profile,nodes,h,sup,l2,flux_scale,relative");
    json orders = json::array();
    for (std::size_t p = 0; p < profiles.size(); ++p) {
      std::vector<double> hs, sups;
      for (int n : levels) {
        GridSpec sp = GridSpec::unit(grid.dim, n, n, grid.T);
        const GridPtr G = build_grid(sp);
        const Coefs k = build_coefs(coef, G);
        const NonlinearityModel b = model.build(G, k);
        const GaugeFunction phi = make_gauge(G, profiles[p], k.a);
        const auto data = bump_ensemble(G, es);
        std::vector<FluxRecord> r1, r2;
        if (variant == "S") {
          r1 = dn_apply_ensemble(k.a, k.rho, b, data, {}, nullptr, c.threads);
          r2 = dn_apply_ensemble(k.a, k.rho, apply_S(phi, b, k.a, k.rho), data, {}, nullptr, c.threads);
        } else {
          const SourceModel s = SourceModel::make(b, sample(G, *F));
          const SourceModel u = apply_U(phi, s, k.a, k.rho);
          r1 = dn_apply_ensemble(k.a, k.rho, s.d, data, {}, &s.F, c.threads);
          r2 = dn_apply_ensemble(k.a, k.rho, u.d, data, {}, &u.F, c.threads);
        }
        double sup = 0.0, l2 = 0.0, scale = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
          const FluxComparison cmp = dn_compare(r1[i], r2[i]);
          sup = std::max(sup, cmp.sup);
          l2 = std::max(l2, cmp.l2);
          scale = std::max(scale, sup_norm(r1[i].flux()));
        }
        csv.row(p, n, G->h(0), sup, l2, scale, scale > 0.0 ? sup / scale : 0.0);
        hs.push_back(G->h(0));
        sups.push_back(sup);
      }
      const double order = loglog_slope(hs, sups);
      csv.comment("fitted_order," + std::to_string(p) + "," + num(order));
      orders.push_back(order);
    }
    c.summary["orders"] = orders;
  };
}

Runner parse_linearize(Obj& root, const GridCfg& grid, const CoefCfg& coef) {
  Obj o = root.obj("linearize");
  const ModelCfg model = parse_model(root.obj("model"));
  const DatumCfg base = parse_datum(o.has("base") ? o.at("base") : json("zero"), "linearize.base");
  std::vector<DatumCfg> dirs;
  int ensemble = 0;
  const json& dj = o.at("directions");
  if (dj.is_object() && dj.contains("ensemble")) {
    Obj e(dj, "linearize.directions");
    ensemble = e.req<int>("ensemble");
    e.finish();
    if (ensemble < 1 || ensemble > 5) bad("linearize.directions.ensemble", "order must lie in 1..5");
  } else {
    if (!dj.is_array() || dj.empty() || dj.size() > 5) bad("linearize.directions", "expected 1 to 5 data");
    for (std::size_t i = 0; i < dj.size(); ++i)
      dirs.push_back(parse_datum(dj[i], "linearize.directions[" + std::to_string(i) + "]"));
  }
  const std::string st = o.get<std::string>("stencil", "central");
  if (st != "central" && st != "forward") bad("linearize.stencil", "expected central or forward");
  const auto steps = list<double>(o, "steps", {0.1, 0.05});
  o.finish();
  return [=](Ctx& c) {
    const GridPtr G = build_grid(grid.spec());
    const Coefs k = build_coefs(coef, G);
    const NonlinearityModel b = model.build(G, k);
    std::vector<BoundaryField> h;
    if (ensemble) {
      need_seed(c, "ensemble directions");
      EnsembleSpec es;
      es.seed = c.seed;
      es.amplitudes = {1.0};
      es.shapes = ensemble;
      h = bump_ensemble(G, es);
    } else {
      for (const auto& d : dirs) h.push_back(d.build(G));
    }
    SolveOptions tight;
    tight.newton_tol = 1e-14;
    const BoundaryField f0 = base.build(G);
    const SolveReport sr = solve_ibvp(k.a, k.rho, b, f0, tight);
    if (!sr.converged) fail("forward_solver", ErrorKind::Solver, "base solve failed: " + sr.message);
    const LinearizedSolution direct = higher_linearized(k.a, k.rho, b, sr.u, h);
    write_linearized(direct, c.dir("direct"));
    FdOptions fo;
    fo.type = st == "central" ? StencilType::CentralProduct : StencilType::ForwardProduct;
    fo.solve = tight;
    fo.threads = c.threads;
    Csv csv(c.file("crossroute.csv"), "crossroute", "order,stencil,step,top_rel_error,flux_rel_error");
    std::vector<double> ss, et, ef;
    for (std::size_t i = 0; i < steps.size(); ++i) {
      fo.s = steps[i];
      const LinearizedSolution fd = fd_linearized(k.a, k.rho, b, f0, h, fo);
      if (i == 0) write_linearized(fd, c.dir("fd"));
      const double e1 = sup_norm(fd.top() - direct.top()) / std::max(sup_norm(direct.top()), 1e-300);
      const double e2 = sup_norm(fd.flux - direct.flux) / std::max(sup_norm(direct.flux), 1e-300);
      csv.row(static_cast<int>(h.size()), st, steps[i], e1, e2);
      ss.push_back(steps[i]);
      et.push_back(e1);
      ef.push_back(e2);
    }
    if (ss.size() >= 2) {
      csv.comment("slope_top," + num(loglog_slope(ss, et)));
      csv.comment("slope_flux," + num(loglog_slope(ss, ef)));
      c.summary["slope_top"] = loglog_slope(ss, et);
    }
  };
}

Runner parse_go(Obj& root, const GridCfg& grid, const CoefCfg& coef) {
  Obj o = root.obj("go");
  GOSpec spec;
  spec.y = point(o.at("y"), "go.y");
  spec.sign = o.get("sign", 1);
  spec.t0 = o.get("t0", spec.t0);
  spec.delta = o.get("delta", spec.delta);
  const Fn q = o.has("q") ? parse_fn(o.at("q"), "go.q") : Fn([](double, const Point&) { return 0.0; });
  const auto taus = list<double>(o, "taus", {8, 16, 32, 64, 128});
  o.finish();
  if (spec.sign != 1 && spec.sign != -1) bad("go.sign", "expected +1 or -1");
  return [=](Ctx& c) {
    const GridPtr G = build_grid(grid.spec());
    const Coefs k = build_coefs(coef, G);
    const DecayReport r = decay_sweep(k.a, k.rho, sample(G, q), spec, taus, c.threads);
    write_decay_csv(r, c.file("decay.csv").string());
    c.summary["slope_l2"] = r.slope_l2;
    c.summary["slope_h1"] = r.slope_h1;
  };
}

Runner parse_carleman(Obj& root, const GridCfg& grid, const CoefCfg& coef) {
  Obj o = root.obj("carleman");
  const Point x0 = point(o.at("x0"), "carleman.x0");
  const auto taus = list<double>(o, "taus", {5, 10, 20, 40});
  const auto members = list<std::string>(o, "members", {"poly", "poly_t2", "bump", "tilted", "sine"});
  for (const auto& m : members)
    if (std::find(carleman_recipes().begin(), carleman_recipes().end(), m) == carleman_recipes().end())
      bad("carleman.members", "unknown test function '" + m + "'");
  const Fn q = o.has("q") ? parse_fn(o.at("q"), "carleman.q") : Fn([](double, const Point&) { return 0.0; });
  o.finish();
  if (grid.dim != 3) bad("grid.dim", "the Carleman sweep runs on a 3D box");
  return [=](Ctx& c) {
    const GridPtr G = build_grid(grid.spec());
    (void)build_coefs(coef, G);
    std::vector<CarlemanFamilyMember> fam;
    for (const auto& m : members) fam.push_back({m, carleman_test_function(G, m)});
    const CarlemanReport r = carleman_sweep(G, x0, sample(G, q), fam, taus, c.threads);
    write_carleman_csv(r, c.file("carleman.csv").string());
    c.summary["tau_emp"] = r.tau_emp;
    c.summary["C_emp"] = r.C_emp;
    c.summary["plateau_reached"] = r.plateau_reached;
  };
}

struct RecoveryCfg {
  RecoveryOptions opts;
  int K = 1;
  DatumCfg datum;
  std::size_t budget = 100000;
  std::optional<Point> region_x0;
  double region_margin = 0.1;
};

RecoveryCfg parse_recovery(Obj& o) {
  RecoveryCfg r;
  auto& ro = r.opts;
  r.K = o.get("K", 1);
  if (r.K < 1 || r.K > 4) bad(o.sub_path("K"), "must lie in 1..4");
  ro.taus = list<double>(o, "taus", ro.taus);
  const int S = o.get("slices", 0);
  for (int i = 0; i < S; ++i) ro.slice_times.push_back((i + 1.0) / (S + 1.0));
  const std::string tb = o.get<std::string>("time_basis", "spline");
  if (tb != "spline" && tb != "chebyshev") bad(o.sub_path("time_basis"), "expected spline or chebyshev");
  ro.time_basis = tb == "spline" ? RecoveryOptions::TimeBasis::Spline : RecoveryOptions::TimeBasis::Chebyshev;
  ro.time_degree = o.get("time_degree", ro.time_degree);
  const std::string comb = o.get<std::string>("combine", "joint");
  if (comb != "joint" && comb != "richardson") bad(o.sub_path("combine"), "expected joint or richardson");
  ro.combine = comb == "joint" ? RecoveryOptions::Combine::Joint : RecoveryOptions::Combine::Richardson;
  const std::string bk = o.get<std::string>("basis", "chebyshev");
  if (bk != "chebyshev" && bk != "lattice") bad(o.sub_path("basis"), "expected chebyshev or lattice");
  ro.basis.kind = bk == "chebyshev" ? BasisSpec::Kind::Chebyshev : BasisSpec::Kind::Lattice;
  ro.basis.m = o.get("basis_m", ro.basis.m);
  ro.probes.sources = o.get("sources", ro.probes.sources);
  ro.probes.beams = o.get("beams", ro.probes.beams);
  ro.probes.radius_factor = o.get("radius_factor", ro.probes.radius_factor);
  ro.probes.aperture = o.get("aperture", ro.probes.aperture);
  ro.probes.jitter = o.get("jitter", ro.probes.jitter);
  ro.gn_iterations = o.get("gn_iterations", ro.gn_iterations);
  ro.delta_steps = o.get("delta_steps", ro.delta_steps);
  ro.lambda = o.get("lambda", ro.lambda);
  ro.oversampling = o.get("oversampling", ro.oversampling);
  ro.fd_step = o.get("fd_step", ro.fd_step);
  r.budget = o.get<std::size_t>("budget", r.budget);
  r.datum = parse_datum(o.has("datum") ? o.at("datum") : json("zero"), o.sub_path("datum"));
  if (o.has("region")) {
    Obj g = o.obj("region");
    r.region_x0 = point(g.at("x0"), g.sub_path("x0"));
    r.region_margin = g.get("margin", r.region_margin);
    g.finish();
  }
  return r;
}

Runner parse_reconstruct(Obj& root, const GridCfg& grid, const CoefCfg& coef) {
  Obj o = root.obj("reconstruct");
  const ModelCfg m1 = parse_model(root.obj("model1")), m2 = parse_model(root.obj("model2"));
  RecoveryCfg rc = parse_recovery(o);
  std::optional<BreakMode> mode;
  BreakSideData side;
  if (o.has("break")) {
    Obj b = o.obj("break");
    const std::string ms = b.req<std::string>("mode");
    if (ms != "polynomial" && ms != "linear-potential")
      bad("reconstruct.break.mode", "recovered representatives support polynomial and linear-potential");
    mode = parse_break_mode(ms);
    side.N = b.get("N", side.N);
    side.assert_hypotheses = b.get("assert", side.assert_hypotheses);
    side.tol = b.get("tol", side.tol);
    side.positivity = b.get("positivity", side.positivity);
    b.finish();
  }
  o.finish();
  return [=](Ctx& c) mutable {
    if (rc.opts.probes.jitter != 0.0) need_seed(c, "jittered probes");
    rc.opts.probes.seed = c.seed;
    rc.opts.threads = c.threads;
    const GridPtr G = build_grid(grid.spec());
    const Coefs k = build_coefs(coef, G);
    const NonlinearityModel b1 = m1.build(G, k), b2 = m2.build(G, k);
    DNOracle o1("model1", k.a, k.rho, b1, rc.budget), o2("model2", k.a, k.rho, b2, rc.budget);
    if (rc.region_x0) {
      const BoundaryRegion tilde = classify_boundary(G, *rc.region_x0, 0.0, 0.0, rc.region_margin).tilde;
      o1.restrict_to(tilde);
      o2.restrict_to(tilde);
    }
    const BoundaryField f0 = rc.datum.build(G);
    const TaylorRecovery tr = recover_taylor(o1, o2, k.a, k.rho, f0, rc.K, rc.opts);
    write_recovered(tr.first, c.dir("recovered_1"));
    write_recovered(tr.second, c.dir("recovered_2"));
    // validation only: exact coefficients through the hidden base states
    const Field u1 = o1.base_state(f0), u2 = o2.base_state(f0);
    Csv csv(c.file("recovery.csv"), "recovery",
            "order,delta_l2,noise_floor,truth_rel_error,residual_1,residual_2,sigma_min_1,sigma_min_2");
    for (int j = 0; j < rc.K; ++j) {
      write_field_binary(tr.delta[j], c.file("delta_D" + std::to_string(j + 1) + ".bin").string());
      Field t1(G, 0.0), t2(G, 0.0);
      for (int l = 0; l < G->nt(); ++l)
        for (std::size_t s = 0; s < G->spatial_size(); ++s) {
          t1.at(l, s) = b1.eval(l, s, u1.at(l, s), j + 1);
          t2.at(l, s) = b2.eval(l, s, u2.at(l, s), j + 1);
        }
      const auto& d1 = tr.first.diagnostics[j];
      const auto& d2 = tr.second.diagnostics[j];
      csv.row(j + 1, l2_norm(tr.delta[j]), tr.noise_floor[j], relint(tr.delta[j], t2 - t1), d1.residual, d2.residual,
              d1.sigma_min, d2.sigma_min);
    }
    c.summary["oracle_calls"] = tr.first.oracle_calls + tr.second.oracle_calls;
    if (mode) {
      const GaugeVerdict v = break_gauge(assemble_representative(tr.first, k.a, k.rho),
                                         assemble_representative(tr.second, k.a, k.rho), *mode, side, k.a, k.rho);
      std::ofstream(c.file("verdict.json")) << v.to_json() << '\n';
      write_field_binary(v.phi, c.file("phi.bin").string());
      if (!v.potential_difference.empty())
        write_field_binary(v.potential_difference, c.file("potential_difference.bin").string());
      c.summary["verdict"] = to_string(v.verdict);
      if (v.verdict == Verdict::HypothesesViolated) c.status = kHypothesis;
    }
  };
}

Runner parse_inverse_source(Obj& root, const GridCfg& grid, const CoefCfg& coef) {
  Obj o = root.obj("inverse-source");
  const ModelCfg d = parse_model(root.obj("model"));
  const Fn F = parse_fn(o.at("source"), "inverse-source.source");
  SourceSplitSide side;
  side.mode = o.get("mode", side.mode);
  side.N = o.get("N", side.N);
  side.leading_equals_subleading = o.get("leading_equals_subleading", false);
  side.positivity = o.get("positivity", side.positivity);
  RecoveryCfg rc = parse_recovery(o);
  o.finish();
  if (side.mode < 1 || side.mode > 4) bad("inverse-source.mode", "must lie in 1..4");
  return [=](Ctx& c) mutable {
    rc.opts.probes.seed = c.seed;
    rc.opts.threads = c.threads;
    const GridPtr G = build_grid(grid.spec());
    const Coefs k = build_coefs(coef, G);
    const NonlinearityModel dm = d.build(G, k);
    const Field Ft = sample(G, F);
    DNOracle o1("source", k.a, k.rho, SourceModel::make(dm, Ft), rc.budget);
    const SourceEstimate est = inverse_source(o1, k.a, k.rho, rc.datum.build(G), rc.K, rc.opts, side);
    std::ofstream(c.file("estimate.json")) << est.to_json() << '\n';
    Csv csv(c.file("source.csv"), "inverse-source", "quantity,l2,truth_l2,relative_error");
    if (!est.F.empty()) {
      write_field_binary(est.F, c.file("F.bin").string());
      csv.row("F", l2_norm(est.F), l2_norm(Ft), relint(est.F, Ft));
    }
    const auto truth = monomial_coefficients(dm, static_cast<int>(est.d.size()));
    for (std::size_t j = 0; j < est.d.size(); ++j) {
      write_field_binary(est.d[j], c.file("d" + std::to_string(j + 1) + ".bin").string());
      const Field& t = j + 1 < truth.size() ? truth[j + 1] : Field(G, 0.0);
      csv.row("d" + std::to_string(j + 1), l2_norm(est.d[j]), l2_norm(t), relint(est.d[j], t));
    }
    write_field_binary(est.phi, c.file("phi.bin").string());
    c.summary["verdict"] = to_string(est.verdict);
    if (est.verdict == Verdict::HypothesesViolated) c.status = kHypothesis;
  };
}

int exit_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::Solver:
    case ErrorKind::Numeric:
    case ErrorKind::Truncation: return kSolver;
    case ErrorKind::Hypothesis: return kHypothesis;
    case ErrorKind::Budget: return kBudget;
    default: return kConfig;
  }
}

// Presets -----------------------------------------------------------------------

const char* kPresets = R"({
  "forward": {
    "solve": {"seed": 1, "grid": {"dim": 2, "nodes": 17, "nt": 17},
              "model": {"type": "polynomial", "coeffs": [0, 0, 0, 1]},
              "forward": {"mode": "solve", "datum": {"kind": "gauss", "amp": 1.0, "center": [0.5, 0.0], "width": 0.05}}},
    "zero": {"seed": 1, "grid": {"dim": 2, "nodes": 9, "nt": 5},
             "model": {"type": "polynomial", "coeffs": [0, 0, 0, 1]},
             "forward": {"mode": "solve", "datum": "zero"}},
    "manufactured": {"seed": 1, "grid": {"dim": 2},
                     "model": {"type": "polynomial", "coeffs": [0, 0, 0, 1]},
                     "forward": {"mode": "manufactured", "levels": [9, 17, 33, 65]}},
    "blowup": {"seed": 1, "grid": {"dim": 2, "nodes": 9, "nt": 21},
               "model": {"type": "polynomial", "coeffs": [0, 0, -1]},
               "forward": {"mode": "blowup", "datum": 1.0, "lambdas": [1, 2, 4, 8, 16, 32, 64]}}
  },
  "gauge-demo": {
    "S": {"seed": 20240601, "grid": {"dim": 2},
          "model": {"type": "polynomial", "coeffs": [0, 0, 0, 1]},
          "gauge-demo": {"variant": "S", "levels": [9, 17, 33],
                         "profiles": [{"amplitude": 0.8, "time_power": 2, "tilt": [0.5, -0.3]},
                                      {"amplitude": 0.5, "time_power": 1},
                                      {"amplitude": 1.0, "time_power": 3, "tilt": [-0.4, 0.6]}]}},
    "U": {"seed": 20240601, "grid": {"dim": 2},
          "model": {"type": "polynomial", "coeffs": [0, 0, 1]},
          "gauge-demo": {"variant": "U", "levels": [9, 17, 33],
                         "source": {"kind": "bump", "amp": 1.0, "time_power": 1},
                         "profiles": [{"amplitude": 0.8, "time_power": 2, "tilt": [0.5, -0.3]},
                                      {"amplitude": 0.5, "time_power": 1},
                                      {"amplitude": 1.0, "time_power": 3, "tilt": [-0.4, 0.6]}]}}
  },
  "linearize": {
    "cross-route": {"seed": 1, "grid": {"dim": 2, "nodes": 9, "nt": 9},
                    "model": {"type": "polynomial", "coeffs": [0, 0, 0.5, 1]},
                    "linearize": {"base": {"kind": "gauss", "amp": 0.5, "center": [0.0, 0.5], "width": 0.25},
                                  "directions": [{"kind": "gauss", "center": [1.0, 0.3], "width": 0.25},
                                                 {"kind": "gauss", "center": [0.5, 0.0], "width": 0.25},
                                                 {"kind": "gauss", "center": [0.2, 1.0], "width": 0.25}],
                                  "stencil": "central", "steps": [0.1, 0.05]}}
  },
  "go": {
    "decay": {"seed": 1, "grid": {"dim": 2, "nodes": 65, "nt": 65},
              "go": {"y": [-0.5, 0.5], "sign": 1, "q": {"kind": "affine", "base": 0.5},
                     "taus": [8, 16, 32, 64, 128]}}
  },
  "carleman": {
    "sweep": {"seed": 1, "grid": {"dim": 3, "nodes": 9, "nt": 17, "T": 0.05},
              "carleman": {"x0": [-1.0, 0.5, 0.5], "taus": [5, 10, 20, 40],
                           "q": {"kind": "affine", "base": 1.0, "grad": [1, 0, 0], "t": 1.0}}}
  },
  "reconstruct": {
    "linear-pair": {"seed": 1, "grid": {"dim": 2, "nodes": 17, "nt": 17},
                    "model1": {"type": "polynomial", "coeffs": [0, {"kind": "sinprod", "base": 1.0, "amp": 0.5}]},
                    "model2": {"type": "polynomial", "coeffs": [0, {"kind": "gauss", "base": 1.0, "amp": 2.0, "center": [0.6, 0.4], "width": 0.05}]},
                    "reconstruct": {"K": 1, "basis_m": 6}},
    "quadratic-pair": {"seed": 1, "grid": {"dim": 2, "nodes": 17, "nt": 17},
                       "model1": {"type": "polynomial", "coeffs": [0, {"kind": "sinprod", "base": 1.0, "amp": 0.5}, {"kind": "affine", "base": 1.0, "grad": [0.5, 0]}]},
                       "model2": {"type": "polynomial", "coeffs": [0, {"kind": "gauss", "base": 1.0, "amp": 2.0, "center": [0.6, 0.4], "width": 0.05}, {"kind": "gauss", "base": 1.0, "amp": 1.0, "center": [0.4, 0.5], "width": 0.08}]},
                       "reconstruct": {"K": 2, "basis_m": 6}},
    "identical": {"seed": 1, "grid": {"dim": 2, "nodes": 17, "nt": 17},
                  "model1": {"type": "polynomial", "coeffs": [0, {"kind": "sinprod", "base": 1.0, "amp": 0.5}]},
                  "model2": {"type": "polynomial", "coeffs": [0, {"kind": "sinprod", "base": 1.0, "amp": 0.5}]},
                  "reconstruct": {"K": 1, "basis_m": 6}},
    "polynomial-break": {"seed": 1, "grid": {"dim": 2, "nodes": 17, "nt": 17},
                         "model1": {"type": "polynomial", "coeffs": [0, 1, 1]},
                         "model2": {"type": "polynomial", "coeffs": [0, 1, {"kind": "affine", "base": 1.0, "grad": [0.5, 0]}]},
                         "reconstruct": {"K": 2, "basis_m": 6,
                                         "break": {"mode": "polynomial", "N": 2, "tol": 0.05, "positivity": 0.1}}},
    "linear-potential": {"seed": 1, "grid": {"dim": 2, "nodes": 17, "nt": 17},
                         "model1": {"type": "polynomial", "coeffs": [0, {"kind": "sinprod", "base": 1.0, "amp": 0.5}]},
                         "model2": {"type": "polynomial", "coeffs": [0, {"kind": "gauss", "base": 1.0, "amp": 2.0, "center": [0.6, 0.4], "width": 0.05}]},
                         "reconstruct": {"K": 1, "basis_m": 6, "region": {"x0": [-0.5, -0.5], "margin": 0.1},
                                         "break": {"mode": "linear-potential", "tol": 1e-6}}}
  },
  "inverse-source": {
    "quadratic": {"seed": 1, "grid": {"dim": 2, "nodes": 17, "nt": 65},
                  "model": {"type": "polynomial", "coeffs": [0, 0, 1]},
                  "inverse-source": {"mode": 2, "N": 2, "K": 2, "slices": 11, "basis_m": 6,
                                     "source": {"kind": "bump", "amp": 5.0, "time_power": 1}}},
    "linear": {"seed": 1, "grid": {"dim": 2, "nodes": 17, "nt": 17},
               "model": {"type": "polynomial", "coeffs": [0, 1]},
               "inverse-source": {"mode": 2, "N": 1, "K": 1, "basis_m": 6,
                                  "source": {"kind": "bump", "amp": 5.0, "time_power": 1}}}
  }
})";

const json& presets() {
  static const json p = json::parse(kPresets);
  return p;
}

}  // namespace

const std::vector<std::string>& commands() {
  static const std::vector<std::string> c{"forward", "gauge-demo", "linearize", "go",
                                          "carleman", "reconstruct", "inverse-source"};
  return c;
}

std::vector<std::string> preset_names(const std::string& command) {
  std::vector<std::string> out;
  if (presets().contains(command))
    for (const auto& [k, v] : presets()[command].items()) out.push_back(k);
  return out;
}

json preset(const std::string& command, const std::string& name) {
  if (!presets().contains(command)) bad("", "unknown command '" + command + "'");
  const json& p = presets()[command];
  if (!p.contains(name)) bad("--preset", "no preset '" + name + "' for " + command);
  return p[name];
}

json resolve_config(const Invocation& inv) {
  if (std::find(commands().begin(), commands().end(), inv.command) == commands().end())
    bad("", "unknown command '" + inv.command + "'");
  json cfg = json::object();
  if (!inv.preset.empty()) {
    cfg = preset(inv.command, inv.preset);
  } else if (inv.config_path.empty()) {
    cfg = presets()[inv.command].begin().value();
  }
  if (!inv.config_path.empty()) {
    std::ifstream is(inv.config_path);
    if (!is) bad("--config", "cannot open " + inv.config_path);
    json file;
    try {
      is >> file;
    } catch (const json::exception& e) {
      bad("--config", std::string("malformed JSON: ") + e.what());
    }
    if (file.is_object() && file.value("format", "") == kManifestFormat) {
      if (file.value("command", "") != inv.command) bad("--config", "manifest belongs to another command");
      file = file.at("config");
    }
    if (!file.is_object()) bad("--config", "expected a JSON object");
    cfg.merge_patch(file);
  }
  if (inv.seed) cfg["seed"] = *inv.seed;
  return cfg;
}

std::string config_hash(const json& config) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : config.dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int run(const Invocation& inv, std::ostream& log, std::ostream& err) {
  try {
    const json cfg = resolve_config(inv);
    Obj root(cfg, "");
    Ctx ctx;
    ctx.log = &log;
    ctx.threads = inv.threads > 0 ? inv.threads : std::max(1u, std::thread::hardware_concurrency());
    if (root.has("seed")) {
      ctx.seed = Obj::convert<std::uint64_t>(cfg.at("seed"), "seed");
      ctx.has_seed = true;
    }
    const GridCfg grid = root.has("grid") ? parse_grid(root.obj("grid")) : GridCfg{};
    const CoefCfg coef = root.has("coefficients") ? parse_coefficients(root.obj("coefficients")) : CoefCfg{};
    Runner runner;
    const std::string& c = inv.command;
    if (c == "forward") runner = parse_forward(root, grid, coef);
    else if (c == "gauge-demo") runner = parse_gauge_demo(root, grid, coef);
    else if (c == "linearize") runner = parse_linearize(root, grid, coef);
    else if (c == "go") runner = parse_go(root, grid, coef);
    else if (c == "carleman") runner = parse_carleman(root, grid, coef);
    else if (c == "reconstruct") runner = parse_reconstruct(root, grid, coef);
    else runner = parse_inverse_source(root, grid, coef);
    root.finish();

    ctx.out = inv.out_dir;
    fs::create_directories(ctx.out);
    runner(ctx);

    json m;
    m["format"] = kManifestFormat;
    m["version"] = kVersion;
    m["command"] = c;
    m["preset"] = inv.preset;
    m["seed"] = ctx.has_seed ? json(ctx.seed) : json(nullptr);
    m["config_hash"] = config_hash(cfg);
    m["config"] = cfg;
    m["outputs"] = ctx.outputs;
    m["summary"] = ctx.summary;
    m["exit_code"] = ctx.status;
    std::ofstream(ctx.out / "manifest.json") << m.dump(2) << '\n';
    log << c << ": " << ctx.summary.dump() << "\n";
    return ctx.status;
  } catch (const Error& e) {
    err << "error [" << e.code() << "] " << e.what() << "\n";
    return exit_for(e.kind());
  } catch (const std::exception& e) {
    err << "error [cli.internal] " << e.what() << "\n";
    return kSolver;
  }
}

int main(int argc, char** argv) {
  CLI::App app{"Semilinear parabolic inverse problems: forward solves, linearization, GO, Carleman, reconstruction"};
  app.require_subcommand(1);
  Invocation inv;
  for (const auto& c : commands()) {
    CLI::App* sub = app.add_subcommand(c, "run the " + c + " pipeline");
    sub->add_option("--config", inv.config_path, "JSON config or manifest.json of an earlier run");
    sub->add_option("--out", inv.out_dir, "output directory")->capture_default_str();
    sub->add_option("--threads", inv.threads, "worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
    sub->add_option("--seed", inv.seed, "seed, overrides the config");
    std::string names;
    for (const auto& n : preset_names(c)) names += (names.empty() ? "" : ", ") + n;
    sub->add_option("--preset", inv.preset, "named preset: " + names);
    sub->callback([&inv, c] { inv.command = c; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  return run(inv, std::cout, std::cerr);
}

}  // namespace ibvp::cli
