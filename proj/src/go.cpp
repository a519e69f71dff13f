#include "ibvp/go.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

#include "ibvp/error.hpp"
#include "ibvp/parallel.hpp"

namespace ibvp {

namespace {
constexpr const char* kMod = "go_solutions";
using Vec = Eigen::VectorXd;

// sqrt(13! / (2^13 (6!)^2)), so that the integral of chi_star^2 is 1
const double kChiNorm = std::sqrt(6227020800.0 / (8192.0 * 518400.0));

double dist(const Point& x, const Point& y, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return std::sqrt(s);
}

Point direction(const Point& x, const Point& y, int n) {
  const double r = dist(x, y, n);
  Point th{0.0, 0.0, 0.0};
  for (int i = 0; i < n; ++i) th[i] = (x[i] - y[i]) / r;
  return th;
}

bool rho_is_one(const Field& rho) {
  for (double v : rho.values())
    if (v != 1.0) return false;
  return true;
}

// Spatial part of c: h(theta) r^{-(n-1)/2} (h = 1 for c-).
std::vector<double> spatial_part(const SpaceTimeGrid& g, const GOSpec& spec, int sign) {
  const int n = g.dim();
  std::vector<double> s(g.spatial_size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const Point x = g.x(i);
    const double r = dist(x, spec.y, n);
    const double ang = sign > 0 ? spec.angular(direction(x, spec.y, n)) : 1.0;
    s[i] = ang * std::pow(r, -0.5 * (n - 1));
  }
  return s;
}

std::shared_ptr<Drift> go_drift(const SpaceTimeGrid& g, const GOSpec& spec, int sign, bool upwind) {
  auto d = std::make_shared<Drift>();
  d->upwind = upwind;
  d->beta.resize(g.spatial_size());
  const int n = g.dim();
  for (std::size_t i = 0; i < g.spatial_size(); ++i) {
    const Point th = direction(g.x(i), spec.y, n);
    for (int j = 0; j < 3; ++j) d->beta[i][j] = -2.0 * sign * spec.tau * th[j];
  }
  return d;
}

// q + sign tau A psi with A psi = -(n-1)/r.
Field conjugated_potential(const Field& q, const GOSpec& spec, int sign) {
  const auto& g = *q.grid();
  Field out = q;
  const int n = g.dim();
  for (int k = 0; k < g.nt(); ++k)
    for (std::size_t s = 0; s < g.spatial_size(); ++s)
      out.at(k, s) += sign * spec.tau * (-(n - 1) / dist(g.x(s), spec.y, n));
  return out;
}
}  // namespace

double chi_star(double s) {
  if (s <= -1.0 || s >= 1.0) return 0.0;
  const double u = 1.0 - s * s;
  return kChiNorm * u * u * u;
}

double chi_star_prime(double s) {
  if (s <= -1.0 || s >= 1.0) return 0.0;
  const double u = 1.0 - s * s;
  return -6.0 * kChiNorm * s * u * u;
}

double GOSpec::chi(double t) const { return chi_star((t - t0) / delta) / std::sqrt(delta); }
double GOSpec::chi_prime(double t) const { return chi_star_prime((t - t0) / delta) / (delta * std::sqrt(delta)); }

void validate(const GOSpec& spec, const SpaceTimeGrid& g) {
  require(spec.static_metric, kMod, ErrorKind::Capability, "time-dependent metrics are not supported");
  require(spec.tau > 0.0, kMod, ErrorKind::Config, "tau must be positive");
  require(spec.sign == 1 || spec.sign == -1, kMod, ErrorKind::Config, "sign must be +1 or -1");
  require(spec.delta > 0.0 && spec.delta < std::min(g.T() - spec.t0, spec.t0), kMod, ErrorKind::Config,
          "delta must lie in (0, min(T - t0, t0))");
  // distance from y to the box
  const auto& sp = g.spec();
  double d2 = 0.0;
  for (int i = 0; i < g.dim(); ++i) {
    const double c = std::clamp(spec.y[i], sp.lo[i], sp.hi[i]);
    d2 += (spec.y[i] - c) * (spec.y[i] - c);
  }
  require(d2 > 0.0, kMod, ErrorKind::Geometry, "source point must lie outside the closed domain");
  require(std::sqrt(d2) >= 2.0 * g.h_max(), kMod, ErrorKind::Geometry, "source point closer than 2h to the domain");
}

Field phase(const GridPtr& g, const Point& y) {
  GOSpec s;
  s.y = y;
  s.delta = 0.25 * std::min(g->T(), 1.0);
  s.t0 = 0.5 * g->T();
  validate(s, *g);
  Field psi(g, 0.0);
  for (int k = 0; k < g->nt(); ++k)
    for (std::size_t i = 0; i < g->spatial_size(); ++i) psi.at(k, i) = dist(g->x(i), y, g->dim());
  return psi;
}

Amplitudes amplitudes(const GridPtr& g, const GOSpec& spec) {
  validate(spec, *g);
  auto sp = spatial_part(*g, spec, +1), sm = spatial_part(*g, spec, -1);
  Amplitudes a{Field(g, 0.0), Field(g, 0.0)};
  for (int k = 0; k < g->nt(); ++k) {
    const double c = spec.chi(g->t(k));
    for (std::size_t i = 0; i < g->spatial_size(); ++i) {
      a.plus.at(k, i) = c * sp[i];
      a.minus.at(k, i) = c * sm[i];
    }
  }
  return a;
}

Field transport_residual(const GridPtr& g, const GOSpec& spec, int sign) {
  Amplitudes amp = amplitudes(g, spec);
  const Field& c = sign > 0 ? amp.plus : amp.minus;
  const int n = g->dim();
  Field out(g, 0.0);
  for (int k = 0; k < g->nt(); ++k)
    for (std::size_t s : g->interior_nodes()) {
      const Point x = g->x(s);
      const Point th = direction(x, spec.y, n);
      const double r = dist(x, spec.y, n);
      double grad = 0.0;
      for (int i = 0; i < n; ++i)
        grad += th[i] * (c.at(k, s + g->stride(i)) - c.at(k, s - g->stride(i))) / (2.0 * g->h(i));
      out.at(k, s) = -2.0 * sign * grad + sign * (-(n - 1) / r) * c.at(k, s);
    }
  return out;
}

Field go_source(const MatrixCoefficient& a, const Field& rho, const Field& q, const GOSpec& spec) {
  const GridPtr& grid = a.grid();
  const auto& g = *grid;
  validate(spec, g);
  require(a.is_identity() && rho_is_one(rho), kMod, ErrorKind::Capability,
          "GO construction needs rho = 1 and a = Id");
  require_same_grid(grid, q.grid(), "go_source");
  const auto S = spatial_part(g, spec, spec.sign);
  Vec SI(g.interior_size()), SB(g.boundary_size());
  for (std::size_t r = 0; r < g.interior_size(); ++r) SI[r] = S[g.interior_nodes()[r]];
  for (std::size_t b = 0; b < g.boundary_size(); ++b) SB[b] = S[g.boundary_nodes()[b]];
  SpatialOperator op = stiffness(g, a, 0);
  Vec AS = op.II * SI + op.IB * SB;
  Field out(grid, 0.0);
  for (int k = 0; k < g.nt(); ++k) {
    const double c = spec.chi(g.t(k)), cp = spec.chi_prime(g.t(k));
    for (std::size_t r = 0; r < g.interior_size(); ++r) {
      const std::size_t s = g.interior_nodes()[r];
      out.at(k, s) = spec.sign * cp * S[s] + c * AS[r] + q.at(k, s) * c * S[s];
    }
  }
  return out;
}

Remainder remainder(const MatrixCoefficient& a, const Field& rho, const Field& q, const GOSpec& spec, double theta) {
  const GridPtr& grid = a.grid();
  const auto& g = *grid;
  Field K = go_source(a, rho, q, spec);
  K *= -1.0;
  const bool upwind = 2.0 * spec.tau * g.h_max() > 4.0;
  auto drift = go_drift(g, spec, spec.sign, upwind);
  LinearPropagator P(a, rho, conjugated_potential(q, spec, spec.sign), theta, drift);
  Remainder out;
  out.R = spec.sign > 0 ? P.forward(&K, nullptr) : P.adjoint(&K, nullptr);
  out.tau = spec.tau;
  out.sign = spec.sign;
  out.upwind = upwind;
  out.l2 = std::sqrt(integrate_Q(hadamard(out.R, out.R)));
  out.source_l2 = std::sqrt(integrate_Q(hadamard(K, K)));
  // gradient energy from the stiffness form (R vanishes on the boundary)
  SpatialOperator op = stiffness(g, MatrixCoefficient::identity(grid), 0);
  const auto& wt = g.time_weights();
  const auto& wo = g.omega_weights();
  double grad2 = 0.0;
  for (int k = 0; k < g.nt(); ++k) {
    Vec RI(g.interior_size());
    for (std::size_t r = 0; r < g.interior_size(); ++r) RI[r] = out.R.at(k, g.interior_nodes()[r]);
    Vec AR = op.II * RI;
    double e = 0.0;
    for (std::size_t r = 0; r < g.interior_size(); ++r) e += wo[g.interior_nodes()[r]] * RI[r] * AR[r];
    grad2 += wt[k] * e;
  }
  out.h1 = std::sqrt(out.l2 * out.l2 + grad2);
  return out;
}

Assembled assemble(const GOSpec& spec, const Field& c, const Field& R, const MatrixCoefficient& a, const Field& rho,
                   const Field& q) {
  const GridPtr& grid = c.grid();
  require_same_grid(grid, R.grid(), "assemble");
  require_same_grid(grid, a.grid(), "assemble");
  const auto& g = *grid;
  validate(spec, g);
  Assembled out;
  out.field = Field(grid, 0.0);
  const int n = g.dim();
  for (int k = 0; k < g.nt(); ++k)
    for (std::size_t s = 0; s < g.spatial_size(); ++s) {
      const double ex = spec.sign * (spec.tau * spec.tau * g.t(k) + spec.tau * dist(g.x(s), spec.y, n));
      out.max_exponent = std::max(out.max_exponent, std::abs(ex));
      const double ec = std::clamp(ex, -700.0, 700.0);
      out.clamped = out.clamped || ec != ex;
      out.field.at(k, s) = std::exp(ec) * (c.at(k, s) + R.at(k, s));
    }
  // residual of the conjugated equation for c + R, backward Euler in time
  const bool upwind = 2.0 * spec.tau * g.h_max() > 4.0;
  auto drift = go_drift(g, spec, spec.sign, upwind);
  SpatialOperator op = level_operator(g, a, 0, drift.get());
  Field qe = conjugated_potential(q, spec, spec.sign);
  Field X = c + R;
  Field Lc = go_source(a, rho, q, spec);
  double res = 0.0;
  for (int k = 1; k + 1 < g.nt(); ++k) {
    Vec XI(g.interior_size()), XB(g.boundary_size()), XP(g.interior_size());
    const int kn = spec.sign > 0 ? k - 1 : k + 1;
    for (std::size_t r = 0; r < g.interior_size(); ++r) {
      XI[r] = X.at(k, g.interior_nodes()[r]);
      XP[r] = X.at(kn, g.interior_nodes()[r]);
    }
    for (std::size_t b = 0; b < g.boundary_size(); ++b) XB[b] = X.at(k, g.boundary_nodes()[b]);
    Vec PX = (XI - XP) / g.dt() + op.II * XI + op.IB * XB;
    for (std::size_t r = 0; r < g.interior_size(); ++r)
      res = std::max(res, std::abs(PX[r] + qe.at(k, g.interior_nodes()[r]) * XI[r]));
  }
  const double scale = sup_norm(Lc);
  out.residual = scale > 0.0 ? res / scale : res;
  return out;
}

Field pairing(const Field& c_plus, const Field& R_plus, const Field& c_minus, const Field& R_minus) {
  return hadamard(c_plus + R_plus, c_minus + R_minus);
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, kMod, ErrorKind::Input, "slope fit needs two points");
  double mx = 0, my = 0;
  const double n = static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]) / n;
    my += std::log(y[i]) / n;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

DecayReport decay_sweep(const MatrixCoefficient& a, const Field& rho, const Field& q, const GOSpec& spec,
                        const std::vector<double>& taus, int threads) {
  DecayReport rep;
  rep.rows.resize(taus.size());
  parallel_for(taus.size(), threads, [&](std::size_t i) {
    GOSpec s = spec;
    s.tau = taus[i];
    Remainder r = remainder(a, rho, q, s);
    rep.rows[i] = {taus[i], r.l2, r.h1, r.upwind};
  });
  std::vector<double> t, l2, h1;
  for (const auto& r : rep.rows) {
    t.push_back(r.tau);
    l2.push_back(r.l2);
    h1.push_back(r.h1);
  }
  rep.slope_l2 = loglog_slope(t, l2);
  rep.slope_h1 = loglog_slope(t, h1);
  return rep;
}

void write_decay_csv(const DecayReport& r, const std::string& path) {
  std::ofstream os(path);
  require(os.good(), kMod, ErrorKind::Input, "cannot write " + path);
  os << "tau,l2,h1,upwind\n" << std::setprecision(17);
  for (const auto& row : r.rows) os << row.tau << ',' << row.l2 << ',' << row.h1 << ',' << row.upwind << '\n';
  os << "slope," << r.slope_l2 << ',' << r.slope_h1 << ",\n";
}

}  // namespace ibvp
