#include "ibvp/models.hpp"

#include <algorithm>
#include <cmath>

#include "ibvp/error.hpp"

namespace ibvp {

namespace {
constexpr const char* kMod = "models";

// j (j-1) ... (j-k+1)
inline double falling(int j, int k) {
  double r = 1.0;
  for (int i = 0; i < k; ++i) r *= (j - i);
  return r;
}

double binomial(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

double factorial(int k) {
  double r = 1.0;
  for (int i = 2; i <= k; ++i) r *= i;
  return r;
}

bool field_time_static(const Field& f) {
  if (f.empty()) return true;
  const auto& g = *f.grid();
  for (int k = 1; k < g.nt(); ++k)
    if (!std::equal(f.level(k), f.level(k) + g.spatial_size(), f.level(0))) return false;
  return true;
}

// Coefficients of sum_j c_j (mu - c)^j in powers of mu at one node.
std::vector<double> reexpand(const std::vector<double>& c, double center) {
  const int K = static_cast<int>(c.size()) - 1;
  std::vector<double> out(c.size(), 0.0);
  for (int m = 0; m <= K; ++m) {
    double acc = 0.0;
    double p = 1.0;
    for (int j = m; j <= K; ++j) {
      acc += c[j] * binomial(j, m) * p;
      p *= -center;
    }
    out[m] = acc;
  }
  return out;
}
}  // namespace

// ------------------------------------------------------------- MuFunction

MuFunction MuFunction::series(std::vector<double> c) { return MuFunction{Kind::Series, std::move(c)}; }
MuFunction MuFunction::sin() { return MuFunction{Kind::Sin, {}}; }
MuFunction MuFunction::cos() { return MuFunction{Kind::Cos, {}}; }
MuFunction MuFunction::exp() { return MuFunction{Kind::Exp, {}}; }

double MuFunction::eval(double mu, int k) const {
  switch (kind) {
    case Kind::Series: {
      double acc = 0.0;
      for (int j = static_cast<int>(coeffs.size()) - 1; j >= k; --j) acc = acc * mu + coeffs[j] * falling(j, k);
      return acc;
    }
    case Kind::Sin:
      switch (k % 4) {
        case 0: return std::sin(mu);
        case 1: return std::cos(mu);
        case 2: return -std::sin(mu);
        default: return -std::cos(mu);
      }
    case Kind::Cos:
      switch (k % 4) {
        case 0: return std::cos(mu);
        case 1: return -std::sin(mu);
        case 2: return -std::cos(mu);
        default: return std::sin(mu);
      }
    case Kind::Exp: return std::exp(mu);
  }
  return 0.0;
}

std::string MuFunction::name() const {
  switch (kind) {
    case Kind::Series: return "series";
    case Kind::Sin: return "sin";
    case Kind::Cos: return "cos";
    case Kind::Exp: return "exp";
  }
  return "series";
}

// ------------------------------------------------------ NonlinearityModel

NonlinearityModel NonlinearityModel::zero(GridPtr grid) { return polynomial(std::move(grid), {}, false); }

NonlinearityModel NonlinearityModel::polynomial(GridPtr grid, std::vector<Field> coeffs, bool check) {
  NonlinearityModel m;
  for (const auto& c : coeffs) require_same_grid(grid, c.grid(), "polynomial model");
  m.grid_ = std::move(grid);
  m.variant_ = Variant::Polynomial;
  m.coeffs_ = std::move(coeffs);
  if (check) m.check_compatibility();
  return m;
}

NonlinearityModel NonlinearityModel::separated(GridPtr grid, Field b0, Field b1, Field b2,
                                               std::vector<SeparableTerm> h, bool check) {
  NonlinearityModel m;
  for (const Field* f : {&b0, &b1, &b2}) require_same_grid(grid, f->grid(), "separated model");
  for (const auto& t : h)
    require(t.factor.size() == static_cast<std::size_t>(grid->nt()), kMod, ErrorKind::Input,
            "separated term needs one factor per time level");
  m.grid_ = std::move(grid);
  m.variant_ = Variant::Separated;
  m.b0_ = std::move(b0);
  m.b1_ = std::move(b1);
  m.b2_ = std::move(b2);
  m.terms_ = std::move(h);
  if (check) m.check_compatibility();
  return m;
}

NonlinearityModel NonlinearityModel::separated_spatial(GridPtr grid, Field b0, Field b1, Field b2,
                                                       std::vector<SeparableTerm> G, bool check) {
  NonlinearityModel m;
  for (const Field* f : {&b0, &b1, &b2}) require_same_grid(grid, f->grid(), "separated model");
  for (const auto& t : G)
    require(t.factor.size() == grid->spatial_size(), kMod, ErrorKind::Input,
            "spatial separated term needs one factor per spatial node");
  m.grid_ = std::move(grid);
  m.variant_ = Variant::SeparatedSpatial;
  m.b0_ = std::move(b0);
  m.b1_ = std::move(b1);
  m.b2_ = std::move(b2);
  m.terms_ = std::move(G);
  if (check) m.check_compatibility();
  return m;
}

NonlinearityModel NonlinearityModel::tabulated(GridPtr grid, Field center, std::vector<Field> coeffs, bool check) {
  require(!coeffs.empty(), kMod, ErrorKind::Input, "tabulated model needs at least one coefficient");
  require_same_grid(grid, center.grid(), "tabulated model");
  for (const auto& c : coeffs) require_same_grid(grid, c.grid(), "tabulated model");
  NonlinearityModel m;
  m.grid_ = std::move(grid);
  m.variant_ = Variant::TabulatedSeries;
  m.center_ = std::move(center);
  m.coeffs_ = std::move(coeffs);
  if (check) m.check_compatibility();
  return m;
}

std::string NonlinearityModel::tag() const {
  switch (variant_) {
    case Variant::Polynomial: return "Polynomial";
    case Variant::Separated: return "Separated";
    case Variant::SeparatedSpatial: return "SeparatedSpatial";
    case Variant::TabulatedSeries: return "TabulatedSeries";
  }
  return "Polynomial";
}

int NonlinearityModel::degree() const {
  if (variant_ == Variant::Polynomial || variant_ == Variant::TabulatedSeries)
    return static_cast<int>(coeffs_.size()) - 1;
  return -1;
}

double NonlinearityModel::eval(int k, std::size_t s, double mu, int order) const {
  const std::size_t idx = k * grid_->spatial_size() + s;
  switch (variant_) {
    case Variant::Polynomial: {
      double acc = 0.0;
      for (int j = static_cast<int>(coeffs_.size()) - 1; j >= order; --j)
        acc = acc * mu + coeffs_[j][idx] * falling(j, order);
      return acc;
    }
    case Variant::TabulatedSeries: {
      const int K = static_cast<int>(coeffs_.size()) - 1;
      if (order > K)
        fail(kMod, ErrorKind::Truncation,
             "tabulated series of order " + std::to_string(K) + " queried at derivative order " +
                 std::to_string(order));
      const double x = mu - center_[idx];
      double acc = 0.0;
      for (int j = K; j >= order; --j) acc = acc * x + coeffs_[j][idx] * falling(j, order);
      return acc;
    }
    case Variant::Separated:
    case Variant::SeparatedSpatial: {
      const double b2 = b2_[idx];
      const double nu = b2 * mu;
      const std::size_t fi = variant_ == Variant::Separated ? static_cast<std::size_t>(k) : s;
      double h = 0.0;
      for (const auto& t : terms_) h += t.factor[fi] * t.fn.eval(nu, order);
      if (order == 0) return b0_[idx] + b1_[idx] * h;
      return b1_[idx] * std::pow(b2, order) * h;
    }
  }
  return 0.0;
}

bool NonlinearityModel::time_static() const {
  for (const auto& c : coeffs_)
    if (!field_time_static(c)) return false;
  if (!field_time_static(center_) || !field_time_static(b0_) || !field_time_static(b1_) || !field_time_static(b2_))
    return false;
  if (variant_ == Variant::Separated)
    for (const auto& t : terms_)
      for (double f : t.factor)
        if (f != t.factor[0]) return false;
  return true;
}

double NonlinearityModel::compatibility_residual() const {
  double r = 0.0;
  for (auto s : grid_->boundary_nodes()) r = std::max(r, std::abs(eval(0, s, 0.0, 0)));
  return r;
}

void NonlinearityModel::check_compatibility() const {
  require(compatibility_residual() <= 1e-10, kMod, ErrorKind::Input,
          "compatibility b(0,x,0) = 0 on boundary nodes is violated");
}

double evaluate(const NonlinearityModel& b, int k, std::size_t s, double mu, int order) {
  require(order >= 0, kMod, ErrorKind::Input, "negative derivative order");
  require(k >= 0 && k < b.grid()->nt() && s < b.grid()->spatial_size(), kMod, ErrorKind::Input,
          "node outside the grid");
  return b.eval(k, s, mu, order);
}

HypothesisReport check_separated_nonvanishing(const NonlinearityModel& b, double tol) {
  HypothesisReport rep;
  if (b.variant() != NonlinearityModel::Variant::Separated &&
      b.variant() != NonlinearityModel::Variant::SeparatedSpatial) {
    rep.holds = false;
    rep.detail = "model is not separated";
    return rep;
  }
  for (std::size_t i = 0; i < b.b1().size(); ++i)
    if (std::abs(b.b1()[i]) <= tol || std::abs(b.b2()[i]) <= tol) ++rep.failing_nodes;
  rep.holds = rep.failing_nodes == 0;
  if (!rep.holds) rep.detail = std::to_string(rep.failing_nodes) + " nodes with vanishing b1 or b2";
  return rep;
}

BoundaryDatumReport check_boundary_datum(const BoundaryField& f) {
  const auto& g = *f.grid();
  BoundaryDatumReport r;
  const double scale = std::max(1.0, sup_norm(f));
  for (std::size_t b = 0; b < g.boundary_size(); ++b) {
    r.initial = std::max(r.initial, std::abs(f.at(0, b)));
    double rate = g.nt() >= 3 ? (-3.0 * f.at(0, b) + 4.0 * f.at(1, b) - f.at(2, b)) / (2.0 * g.dt())
                              : (f.at(1, b) - f.at(0, b)) / g.dt();
    r.initial_rate = std::max(r.initial_rate, std::abs(rate));
  }
  r.tolerance = 10.0 * g.dt() * scale / g.T();
  r.admissible = r.initial <= 1e-12 * scale && r.initial_rate <= r.tolerance;
  return r;
}

// ------------------------------------------------------------------ gauges

bool GaugeFunction::is_zero() const {
  return std::all_of(phi.values().begin(), phi.values().end(), [](double v) { return v == 0.0; });
}

GaugeFunction make_gauge_from_field(Field phi, const MatrixCoefficient& a, bool full_data, std::vector<char> tilde,
                                    double C) {
  const auto& g = *phi.grid();
  require(full_data || tilde.size() == g.boundary_size(), kMod, ErrorKind::Input,
          "partial gauge needs a mask over boundary slots");
  GaugeFunction gf;
  GaugeResiduals& r = gf.residuals;
  for (std::size_t s = 0; s < g.spatial_size(); ++s) r.initial = std::max(r.initial, std::abs(phi.at(0, s)));
  for (int k = 0; k < g.nt(); ++k)
    for (auto s : g.boundary_nodes()) r.dirichlet = std::max(r.dirichlet, std::abs(phi.at(k, s)));
  BoundaryField dn = conormal_derivative(phi, a);
  for (int k = 0; k < g.nt(); ++k)
    for (std::size_t b = 0; b < g.boundary_size(); ++b)
      if (full_data || tilde[b]) r.neumann = std::max(r.neumann, std::abs(dn.at(k, b)));
  r.tolerance = C * g.h_max() * g.h_max() * std::max(1.0, sup_norm(phi));
  const double exact_tol = 1e-12 * std::max(1.0, sup_norm(phi));
  if (r.initial > exact_tol) fail(kMod, ErrorKind::Gauge, "gauge violates phi(0,.) = 0");
  if (r.dirichlet > exact_tol) fail(kMod, ErrorKind::Gauge, "gauge violates phi = 0 on the lateral boundary");
  if (r.neumann > r.tolerance)
    fail(kMod, ErrorKind::Gauge,
         "gauge violates the conormal constraint (" + std::to_string(r.neumann) + " > " +
             std::to_string(r.tolerance) + ")");
  gf.phi = std::move(phi);
  gf.full_data = full_data;
  gf.tilde = std::move(tilde);
  return gf;
}

GaugeFunction make_gauge(const GridPtr& grid, const GaugeProfile& p, const MatrixCoefficient& a, double C) {
  const auto& spec = grid->spec();
  Field phi = sample(grid, [&](double t, const Point& x) {
    double v = p.amplitude * std::pow(t, p.time_power);
    double tilt = 1.0;
    for (int i = 0; i < grid->dim(); ++i) {
      const double xi = (x[i] - spec.lo[i]) / (spec.hi[i] - spec.lo[i]);
      v *= std::pow(xi, p.orders[i][0]) * std::pow(1.0 - xi, p.orders[i][1]);
      tilt += p.tilt[i] * xi;
    }
    return v * tilt;
  });
  return make_gauge_from_field(std::move(phi), a, p.full_data, p.tilde, C);
}

GaugeFunction zero_gauge(const GridPtr& grid) {
  GaugeFunction g;
  g.phi = Field(grid, 0.0);
  return g;
}

SourceModel SourceModel::make(NonlinearityModel d, Field F) {
  const auto& g = *F.grid();
  require_same_grid(d.grid(), F.grid(), "source model");
  for (int k = 0; k < g.nt(); ++k)
    for (std::size_t s = 0; s < g.spatial_size(); ++s)
      require(d.eval(k, s, 0.0, 0) == 0.0, kMod, ErrorKind::Input, "source nonlinearity needs d(t,x,0) = 0");
  for (auto s : g.boundary_nodes())
    require(std::abs(F.at(0, s)) <= 1e-12, kMod, ErrorKind::Input, "source needs F(0,x) = 0 on the boundary");
  return SourceModel{std::move(d), std::move(F)};
}

Field gauge_operator(const Field& phi, const MatrixCoefficient& a, const Field& rho) {
  return apply_operator(phi, a, rho,
                        phi.grid()->nt() >= 3 ? TimeDifference::Centered : TimeDifference::Backward);
}

namespace {
// Per-node Taylor data of b about mu = phi: coefficient j is d^j b(phi)/j!.
std::vector<Field> taylor_at(const NonlinearityModel& b, const Field& phi, int K) {
  const auto& g = *phi.grid();
  std::vector<Field> c(K + 1, Field(phi.grid()));
  for (int k = 0; k < g.nt(); ++k)
    for (std::size_t s = 0; s < g.spatial_size(); ++s)
      for (int j = 0; j <= K; ++j) c[j].at(k, s) = b.eval(k, s, phi.at(k, s), j) / factorial(j);
  return c;
}

// Binomial re-expansion of sum_k c_k (mu + phi)^k in powers of mu.
std::vector<Field> shift_polynomial(const std::vector<Field>& c, const Field& phi) {
  const int N = static_cast<int>(c.size()) - 1;
  std::vector<Field> out(c.size(), Field(phi.grid()));
  for (std::size_t i = 0; i < phi.size(); ++i) {
    const double p = phi[i];
    for (int j = 0; j <= N; ++j) {
      double acc = 0.0, pw = 1.0;
      for (int k = j; k <= N; ++k) {
        acc += c[k][i] * binomial(k, j) * pw;
        pw *= p;
      }
      out[j][i] = acc;
    }
  }
  return out;
}
}  // namespace

NonlinearityModel apply_S(const GaugeFunction& phi, const NonlinearityModel& b, const MatrixCoefficient& a,
                          const Field& rho, int K_max) {
  require_same_grid(phi.phi.grid(), b.grid(), "apply_S");
  if (phi.is_zero()) return b;
  const Field L = gauge_operator(phi.phi, a, rho);
  const GridPtr& grid = b.grid();
  switch (b.variant()) {
    case NonlinearityModel::Variant::Polynomial: {
      std::vector<Field> c = b.coeffs();
      if (c.empty()) c.emplace_back(grid, 0.0);
      c = shift_polynomial(c, phi.phi);
      c[0] += L;
      return NonlinearityModel::polynomial(grid, std::move(c), false);
    }
    case NonlinearityModel::Variant::TabulatedSeries: {
      std::vector<Field> c = b.coeffs();
      c[0] += L;
      return NonlinearityModel::tabulated(grid, b.center() - phi.phi, std::move(c), false);
    }
    default: {
      std::vector<Field> c = taylor_at(b, phi.phi, K_max);
      c[0] += L;
      return NonlinearityModel::tabulated(grid, Field(grid, 0.0), std::move(c), false);
    }
  }
}

SourceModel apply_U(const GaugeFunction& phi, const SourceModel& src, const MatrixCoefficient& a, const Field& rho,
                    int K_max) {
  require_same_grid(phi.phi.grid(), src.F.grid(), "apply_U");
  if (phi.is_zero()) return src;
  const GridPtr& grid = src.F.grid();
  const auto& g = *grid;
  const Field L = gauge_operator(phi.phi, a, rho);
  Field dphi(grid);
  for (int k = 0; k < g.nt(); ++k)
    for (std::size_t s = 0; s < g.spatial_size(); ++s) dphi.at(k, s) = src.d.eval(k, s, phi.phi.at(k, s), 0);
  SourceModel out;
  out.F = src.F - L - dphi;
  std::vector<Field> c;
  switch (src.d.variant()) {
    case NonlinearityModel::Variant::Polynomial:
      c = src.d.coeffs();
      if (c.empty()) c.emplace_back(grid, 0.0);
      c = shift_polynomial(c, phi.phi);
      c[0] = Field(grid, 0.0);
      out.d = NonlinearityModel::polynomial(grid, std::move(c), false);
      break;
    default:
      c = taylor_at(src.d, phi.phi, K_max);
      c[0] = Field(grid, 0.0);
      out.d = NonlinearityModel::tabulated(grid, Field(grid, 0.0), std::move(c), false);
      break;
  }
  for (int k = 0; k < g.nt(); ++k)
    for (std::size_t s = 0; s < g.spatial_size(); ++s)
      require(out.d.eval(k, s, 0.0, 0) == 0.0, kMod, ErrorKind::Numeric, "d_phi(t,x,0) = 0 failed");
  return out;
}

std::vector<double> MuTestSet::nodes() const {
  std::vector<double> out(points);
  for (int i = 0; i < points; ++i) {
    const double c = std::cos((2.0 * i + 1.0) * M_PI / (2.0 * points));
    out[i] = 0.5 * (lo + hi) + 0.5 * (hi - lo) * c;
  }
  return out;
}

double gauge_distance(const NonlinearityModel& b1, const NonlinearityModel& b2, const GaugeFunction& phi,
                      const MatrixCoefficient& a, const Field& rho, const MuTestSet& mus) {
  require_same_grid(b1.grid(), b2.grid(), "gauge_distance");
  const NonlinearityModel s = apply_S(phi, b2, a, rho);
  const auto& g = *b1.grid();
  const auto mu = mus.nodes();
  double d = 0.0;
  for (int k = 0; k < g.nt(); ++k)
    for (auto sn : g.interior_nodes())
      for (double m : mu) d = std::max(d, std::abs(b1.eval(k, sn, m, 0) - s.eval(k, sn, m, 0)));
  return d;
}

NonlinearityModel source_to_nonlinearity(const SourceModel& src, int K_max) {
  const GridPtr& grid = src.F.grid();
  if (src.d.variant() == NonlinearityModel::Variant::Polynomial) {
    std::vector<Field> c = src.d.coeffs();
    if (c.empty()) c.emplace_back(grid, 0.0);
    c[0] -= src.F;
    return NonlinearityModel::polynomial(grid, std::move(c));
  }
  std::vector<Field> c = taylor_at(src.d, Field(grid, 0.0), K_max);
  c[0] -= src.F;
  return NonlinearityModel::tabulated(grid, Field(grid, 0.0), std::move(c));
}

std::vector<Field> monomial_coefficients(const NonlinearityModel& b, int K_max) {
  const GridPtr& grid = b.grid();
  switch (b.variant()) {
    case NonlinearityModel::Variant::Polynomial: return b.coeffs();
    case NonlinearityModel::Variant::TabulatedSeries: {
      const int K = b.degree();
      std::vector<Field> out(K + 1, Field(grid));
      std::vector<double> c(K + 1);
      for (std::size_t i = 0; i < grid->size(); ++i) {
        for (int j = 0; j <= K; ++j) c[j] = b.coeffs()[j][i];
        auto m = reexpand(c, b.center()[i]);
        for (int j = 0; j <= K; ++j) out[j][i] = m[j];
      }
      return out;
    }
    default: return taylor_at(b, Field(grid, 0.0), K_max);
  }
}

}  // namespace ibvp
