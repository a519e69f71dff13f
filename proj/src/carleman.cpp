#include "ibvp/carleman.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "ibvp/dn_map.hpp"
#include "ibvp/error.hpp"
#include "ibvp/parallel.hpp"

namespace ibvp {

namespace {

const char* kMod = "carleman";
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

constexpr int kDegree = 4;   // interpolation degree per panel
constexpr int kPoints = 12;  // Gauss points per panel and axis

// Gauss-Legendre nodes and weights on (-1, 1) by Newton iteration.
std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n) {
  std::vector<double> x(n), w(n);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[n - 1 - i] = z;
    w[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return {x, w};
}

// One interpolation panel along an axis: nloc nodes from `first`, Gauss points
// inside it and the Lagrange basis of its nodes at those points.
struct Panel {
  int first = 0;
  int nloc = 1;
  std::vector<double> x, w;
  std::vector<std::array<double, kDegree + 1>> L;
};

std::vector<Panel> axis_panels(int N, double lo, double h) {
  static const auto gl = gauss_legendre(kPoints);
  std::vector<Panel> out;
  if (N == 1) {
    Panel p;
    p.x = {lo};
    p.w = {1.0};
    p.L = {{1.0}};
    out.push_back(p);
    return out;
  }
  int i = 0;
  while (i < N - 1) {
    Panel p;
    p.first = i;
    p.nloc = std::min(kDegree, N - 1 - i) + 1;
    const double a = lo + i * h, len = (p.nloc - 1) * h;
    for (int g = 0; g < kPoints; ++g) {
      const double xg = a + 0.5 * len * (1.0 + gl.first[g]);
      const double s = (xg - a) / h;
      std::array<double, kDegree + 1> l{};
      for (int j = 0; j < p.nloc; ++j) {
        double v = 1.0;
        for (int m = 0; m < p.nloc; ++m)
          if (m != j) v *= (s - m) / (j - m);
        l[j] = v;
      }
      p.x.push_back(xg);
      p.w.push_back(0.5 * len * gl.second[g]);
      p.L.push_back(l);
    }
    i += p.nloc - 1;
    out.push_back(std::move(p));
  }
  return out;
}

double dist(const Point& x, const Point& y, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
  return std::sqrt(s);
}

// Tensor region of up to three grid axes; remaining coordinates fixed at `base`.
struct Region {
  const SpaceTimeGrid* g = nullptr;
  std::vector<int> axes;
  Point base{0, 0, 0};
  std::array<int, 3> counts{1, 1, 1};
  std::array<std::vector<Panel>, 3> panels;

  Region(const SpaceTimeGrid& grid, std::vector<int> ax, const Point& b) : g(&grid), axes(std::move(ax)), base(b) {
    for (std::size_t a = 0; a < 3; ++a) {
      if (a < axes.size()) {
        counts[a] = g->count(axes[a]);
        panels[a] = axis_panels(counts[a], g->spec().lo[axes[a]], g->h(axes[a]));
      } else {
        panels[a] = axis_panels(1, 0.0, 1.0);
      }
    }
  }
  Point point(double c0, double c1, double c2) const {
    Point x = base;
    const double c[3] = {c0, c1, c2};
    for (std::size_t a = 0; a < axes.size(); ++a) x[axes[a]] = c[a];
    return x;
  }
  // Closest point of the region to y.
  double min_distance(const Point& y) const {
    Point x = base;
    for (int ax : axes) x[ax] = std::clamp(y[ax], g->spec().lo[ax], g->spec().hi[ax]);
    return dist(x, y, g->dim());
  }
};

// Quadrature weights at every Gauss point of the region for exp(-2 tau psi) * extra,
// with psi shifted by `shift` (0 for direct evaluation).
template <class Extra>
std::vector<double> point_weights(const Region& r, const Point& x0, double tau, double shift, Extra&& extra) {
  std::vector<double> w;
  const int n = r.g->dim();
  for (const Panel& p2 : r.panels[2])
    for (const Panel& p1 : r.panels[1])
      for (const Panel& p0 : r.panels[0])
        for (std::size_t k = 0; k < p2.x.size(); ++k)
          for (std::size_t j = 0; j < p1.x.size(); ++j)
            for (std::size_t i = 0; i < p0.x.size(); ++i) {
              const Point x = r.point(p0.x[i], p1.x[j], p2.x[k]);
              w.push_back(p0.w[i] * p1.w[j] * p2.w[k] * std::exp(-2.0 * tau * (dist(x, x0, n) - shift)) * extra(x));
            }
  return w;
}

// Interpolant of nodal values value(i0, i1, i2) at every Gauss point, same order as point_weights.
template <class Value>
void interpolate(const Region& r, Value&& value, std::vector<double>& out) {
  out.clear();
  double loc[kDegree + 1][kDegree + 1][kDegree + 1];
  double a1[kDegree + 1][kDegree + 1][kPoints];
  double a2[kDegree + 1][kPoints][kPoints];
  for (const Panel& p2 : r.panels[2])
    for (const Panel& p1 : r.panels[1])
      for (const Panel& p0 : r.panels[0]) {
        for (int c = 0; c < p2.nloc; ++c)
          for (int b = 0; b < p1.nloc; ++b)
            for (int a = 0; a < p0.nloc; ++a) loc[c][b][a] = value(p0.first + a, p1.first + b, p2.first + c);
        const std::size_t n0 = p0.x.size(), n1 = p1.x.size(), n2 = p2.x.size();
        for (int c = 0; c < p2.nloc; ++c)
          for (int b = 0; b < p1.nloc; ++b)
            for (std::size_t i = 0; i < n0; ++i) {
              double s = 0.0;
              for (int a = 0; a < p0.nloc; ++a) s += p0.L[i][a] * loc[c][b][a];
              a1[c][b][i] = s;
            }
        for (int c = 0; c < p2.nloc; ++c)
          for (std::size_t j = 0; j < n1; ++j)
            for (std::size_t i = 0; i < n0; ++i) {
              double s = 0.0;
              for (int b = 0; b < p1.nloc; ++b) s += p1.L[j][b] * a1[c][b][i];
              a2[c][j][i] = s;
            }
        for (std::size_t k = 0; k < n2; ++k)
          for (std::size_t j = 0; j < n1; ++j)
            for (std::size_t i = 0; i < n0; ++i) {
              double s = 0.0;
              for (int c = 0; c < p2.nloc; ++c) s += p2.L[k][c] * a2[c][j][i];
              out.push_back(s);
            }
      }
}

// int_0^T int_region exp(-2 (tau^2 t + tau psi)) extra |f|^2 with f interpolated from
// nodal values value(k, i0, i1, i2). The integrand is a weighted square at every
// quadrature point, so the result is nonnegative and nonincreasing in tau.
template <class Value, class Extra>
LogValue weighted_square(const Region& r, const Point& x0, double tau, Value&& value, Extra&& extra, bool log_space) {
  const SpaceTimeGrid& g = *r.g;
  const double alpha = 2.0 * tau * tau;
  const double shift = log_space ? r.min_distance(x0) : 0.0;
  const std::vector<double> w = point_weights(r, x0, tau, shift, extra);
  const auto tpanels = axis_panels(g.nt(), 0.0, g.dt());
  std::vector<std::vector<double>> U(kDegree + 1);
  double total = 0.0, lmax = kNegInf;
  std::vector<std::pair<double, double>> parts;  // (log offset, sum) per time panel
  for (const Panel& tp : tpanels) {
    for (int a = 0; a < tp.nloc; ++a) {
      const int k = tp.first + a;
      interpolate(r, [&](int i0, int i1, int i2) { return value(k, i0, i1, i2); }, U[a]);
    }
    const double t0 = log_space ? g.t(tp.first) : 0.0;
    double Mt[kDegree + 1][kDegree + 1] = {};
    for (std::size_t q = 0; q < tp.x.size(); ++q) {
      const double e = tp.w[q] * std::exp(-alpha * (tp.x[q] - t0));
      for (int a = 0; a < tp.nloc; ++a)
        for (int b = a; b < tp.nloc; ++b) Mt[a][b] += e * tp.L[q][a] * tp.L[q][b];
    }
    double S = 0.0;
    for (int a = 0; a < tp.nloc; ++a)
      for (int b = a; b < tp.nloc; ++b) {
        if (Mt[a][b] == 0.0) continue;
        double G = 0.0;
        const double* ua = U[a].data();
        const double* ub = U[b].data();
        for (std::size_t i = 0; i < w.size(); ++i) G += w[i] * ua[i] * ub[i];
        S += (a == b ? 1.0 : 2.0) * Mt[a][b] * G;
      }
    S = std::max(S, 0.0);  // a sum of weighted squares up to rounding
    if (!log_space) {
      total += S;
    } else if (S > 0.0) {
      const double l = std::log(S) - alpha * t0;
      parts.emplace_back(l, S);
      lmax = std::max(lmax, l);
    }
  }
  if (!log_space) return total > 0.0 ? LogValue{std::log(total)} : LogValue{};
  if (parts.empty()) return {};
  double acc = 0.0;
  for (const auto& p : parts) acc += std::exp(p.first - lmax);
  return {lmax + std::log(acc) - 2.0 * tau * shift};
}

LogValue log_add(LogValue a, LogValue b) {
  if (a.zero()) return b;
  if (b.zero()) return a;
  const double m = std::max(a.log, b.log);
  return {m + std::log(std::exp(a.log - m) + std::exp(b.log - m))};
}

LogValue scaled(LogValue a, double factor) {
  if (a.zero() || factor == 0.0) return {};
  return {a.log + std::log(factor)};
}

// Second derivative along `axis` at every node: centered inside, four-point one-sided at the ends.
double second_derivative(const SpaceTimeGrid& g, const double* u, std::size_t s, int axis) {
  const int N = g.count(axis);
  const int i = g.multi(s)[axis];
  const std::size_t st = g.stride(axis);
  const double h2 = g.h(axis) * g.h(axis);
  if (i > 0 && i < N - 1) return (u[s - st] - 2.0 * u[s] + u[s + st]) / h2;
  if (i == 0) return (2.0 * u[s] - 5.0 * u[s + st] + 4.0 * u[s + 2 * st] - u[s + 3 * st]) / h2;
  return (2.0 * u[s] - 5.0 * u[s - st] + 4.0 * u[s - 2 * st] - u[s - 3 * st]) / h2;
}

Field residual_field(const Field& v, const Field& q) {
  const auto& g = *v.grid();
  Field r(v.grid(), 0.0);
  const int nt = g.nt();
  const double dt = g.dt();
  for (int k = 0; k < nt; ++k) {
    const double* u = v.level(k);
    for (std::size_t s = 0; s < g.spatial_size(); ++s) {
      double ut;
      if (k == 0) {
        ut = (-3.0 * v.at(0, s) + 4.0 * v.at(1, s) - v.at(2, s)) / (2.0 * dt);
      } else if (k == nt - 1) {
        ut = (3.0 * v.at(k, s) - 4.0 * v.at(k - 1, s) + v.at(k - 2, s)) / (2.0 * dt);
      } else {
        ut = (v.at(k + 1, s) - v.at(k - 1, s)) / (2.0 * dt);
      }
      double lap = 0.0;
      for (int a = 0; a < g.dim(); ++a) lap += second_derivative(g, u, s, a);
      r.at(k, s) = ut - lap + q.at(k, s) * u[s];
    }
  }
  return r;
}

void check_traces(const Field& v, double tol) {
  const auto& g = *v.grid();
  const double scale = sup_norm(v);
  double worst = 0.0;
  for (int k = 0; k < g.nt(); ++k)
    for (std::size_t s : g.boundary_nodes()) worst = std::max(worst, std::abs(v.at(k, s)));
  for (std::size_t s = 0; s < g.spatial_size(); ++s) worst = std::max(worst, std::abs(v.at(0, s)));
  require(worst <= tol * scale, kMod, ErrorKind::Input,
          "v must vanish on the lateral boundary and at t = 0 (violation " + std::to_string(worst) + ")");
}

}  // namespace

double LogValue::value() const { return zero() ? 0.0 : std::exp(log); }

LogValue CarlemanSides::lhs() const {
  return log_add(scaled(boundary_plus, tau), scaled(volume, tau * tau));
}

LogValue CarlemanSides::rhs() const { return log_add(residual, scaled(boundary_minus, tau)); }

double CarlemanSides::ratio() const {
  const LogValue l = lhs(), r = rhs();
  if (r.zero()) return l.zero() ? 0.0 : std::numeric_limits<double>::infinity();
  if (l.zero()) return 0.0;
  return std::exp(l.log - r.log);
}

std::vector<int> face_signs(const SpaceTimeGrid& g, const Point& x0) {
  std::vector<int> out;
  for (int ax = 0; ax < g.dim(); ++ax)
    for (int side : {-1, +1}) {
      const double c = side < 0 ? g.spec().lo[ax] : g.spec().hi[ax];
      const double d = side * (c - x0[ax]);
      out.push_back(std::abs(d) <= 1e-12 ? 0 : (d > 0 ? 1 : -1));
    }
  return out;
}

CarlemanSides carleman_sides(const GridPtr& gp, const Point& x0, const Field& q, const Field& v, double tau,
                             const CarlemanOptions& opts) {
  require(gp && v.grid() && q.grid(), kMod, ErrorKind::Input, "missing grid");
  require_same_grid(gp, v.grid(), "carleman_sides");
  require_same_grid(gp, q.grid(), "carleman_sides");
  const auto& g = *gp;
  require(g.dim() == 3, kMod, ErrorKind::Capability, "the Carleman estimate is verified for n = 3 only");
  require(tau > 0.0, kMod, ErrorKind::Input, "tau must be positive");
  for (int a = 0; a < 3; ++a)
    require(g.count(a) >= 4, kMod, ErrorKind::Grid, "at least four nodes per axis are needed");
  require(g.nt() >= 3, kMod, ErrorKind::Grid, "at least three time levels are needed");
  // rejects x0 inside the closed box
  (void)classify_boundary(gp, x0);
  check_traces(v, opts.trace_tol);

  CarlemanSides out;
  out.tau = tau;
  const auto one = [](const Point&) { return 1.0; };
  const Region volume(g, {0, 1, 2}, Point{0, 0, 0});
  out.volume = weighted_square(volume, x0, tau,
                               [&](int k, int i0, int i1, int i2) { return v.at(k, g.linear({i0, i1, i2})); }, one,
                               opts.log_space);
  const Field r = residual_field(v, q);
  out.residual = weighted_square(volume, x0, tau,
                                 [&](int k, int i0, int i1, int i2) { return r.at(k, g.linear({i0, i1, i2})); }, one,
                                 opts.log_space);

  const auto signs = face_signs(g, x0);
  for (int ax = 0; ax < 3; ++ax) {
    std::vector<int> tang;
    for (int b = 0; b < 3; ++b)
      if (b != ax) tang.push_back(b);
    for (int side : {-1, +1}) {
      const int sign = signs[2 * ax + (side > 0 ? 1 : 0)];
      if (sign == 0) continue;
      Point base{0, 0, 0};
      base[ax] = side < 0 ? g.spec().lo[ax] : g.spec().hi[ax];
      const Region face(g, tang, base);
      const double normal_offset = std::abs(base[ax] - x0[ax]);
      const int i_face = side < 0 ? 0 : g.count(ax) - 1;
      const std::size_t st = g.stride(ax);
      const double h = g.h(ax);
      auto dnu = [&](int k, int i0, int i1, int) {
        std::array<int, 3> idx{};
        idx[ax] = i_face;
        idx[tang[0]] = i0;
        idx[tang[1]] = i1;
        const std::size_t s = g.linear(idx);
        const double* u = v.level(k);
        return side < 0 ? (-3.0 * u[s] + 4.0 * u[s + st] - u[s + 2 * st]) / (2.0 * h)
                        : (3.0 * u[s] - 4.0 * u[s - st] + u[s - 2 * st]) / (2.0 * h);
      };
      const LogValue part = weighted_square(face, x0, tau, dnu,
                                            [&](const Point& x) { return normal_offset / dist(x, x0, 3); },
                                            opts.log_space);
      if (sign > 0) {
        out.boundary_plus = log_add(out.boundary_plus, part);
      } else {
        out.boundary_minus = log_add(out.boundary_minus, part);
      }
    }
  }
  return out;
}

const std::vector<std::string>& carleman_recipes() {
  static const std::vector<std::string> r{"poly", "poly_t2", "bump", "tilted", "sine", "interior"};
  return r;
}

Field carleman_test_function(const GridPtr& g, const std::string& recipe) {
  const auto& spec = g->spec();
  auto unit = [&](const Point& x) {
    Point u{0, 0, 0};
    for (int i = 0; i < g->dim(); ++i) u[i] = (x[i] - spec.lo[i]) / (spec.hi[i] - spec.lo[i]);
    return u;
  };
  auto prod = [&](const Point& u, auto&& f) {
    double p = 1.0;
    for (int i = 0; i < g->dim(); ++i) p *= f(u[i]);
    return p;
  };
  auto quad = [](double s) { return s * (1.0 - s); };
  if (recipe == "poly")
    return sample(g, [&](double t, const Point& x) { return t * prod(unit(x), quad); });
  if (recipe == "poly_t2")
    return sample(g, [&](double t, const Point& x) { return t * t * prod(unit(x), quad); });
  if (recipe == "bump")
    return sample(g, [&](double t, const Point& x) {
      return t * prod(unit(x), [&](double s) { return quad(s) * quad(s); });
    });
  if (recipe == "tilted")
    return sample(g, [&](double t, const Point& x) {
      const Point u = unit(x);
      return t * (1.0 + u[0] + 2.0 * u[1]) * prod(u, quad);
    });
  if (recipe == "sine")
    return sample(g, [&](double t, const Point& x) {
      return t * (1.0 + t) * prod(unit(x), [](double s) { return std::sin(std::numbers::pi * s); });
    });
  if (recipe == "interior")
    return sample(g, [&](double t, const Point& x) {
      const Point u = unit(x);
      const double s = u[0];
      const double b = (s > 0.25 && s < 0.75) ? std::pow(16.0 * (s - 0.25) * (0.75 - s), 4) : 0.0;
      double p = b;
      for (int i = 1; i < g->dim(); ++i) p *= quad(u[i]);
      return t * p;
    });
  fail(kMod, ErrorKind::Config, "unknown test function recipe '" + recipe + "'");
}

const CarlemanRow& CarlemanReport::row(std::size_t member, std::size_t tau_index) const {
  return rows.at(member * taus.size() + tau_index);
}

CarlemanReport carleman_sweep(const GridPtr& g, const Point& x0, const Field& q,
                              const std::vector<CarlemanFamilyMember>& family, const std::vector<double>& taus,
                              int threads, const CarlemanOptions& opts) {
  require(!family.empty() && !taus.empty(), kMod, ErrorKind::Input, "empty family or tau range");
  require(std::is_sorted(taus.begin(), taus.end()), kMod, ErrorKind::Input, "taus must be increasing");
  CarlemanReport rep;
  rep.taus = taus;
  const std::size_t nT = taus.size();
  rep.rows.resize(family.size() * nT);
  for (const auto& m : family) rep.members.push_back(m.name);
  parallel_for(rep.rows.size(), threads, [&](std::size_t idx) {
    const std::size_t m = idx / nT, j = idx % nT;
    rep.rows[idx] = CarlemanRow{family[m].name, carleman_sides(g, x0, q, family[m].v, taus[j], opts)};
  });
  std::size_t onset = 0;
  std::vector<char> grows(nT, 0);
  for (std::size_t m = 0; m < family.size(); ++m) {
    std::size_t jm = 0;
    for (std::size_t j = 1; j < nT; ++j)
      if (rep.row(m, j).sides.ratio() > rep.row(m, j - 1).sides.ratio()) {
        jm = j;
        grows[j] = 1;
      }
    onset = std::max(onset, jm);
  }
  rep.tau_emp = taus[onset];
  rep.plateau_reached = !grows[nT - 1];
  for (std::size_t j = 0; j < nT; ++j)
    if (grows[j]) rep.growing_taus.push_back(taus[j]);
  for (std::size_t m = 0; m < family.size(); ++m)
    for (std::size_t j = onset; j < nT; ++j) rep.C_emp = std::max(rep.C_emp, rep.row(m, j).sides.ratio());
  return rep;
}

void write_carleman_csv(const CarlemanReport& r, const std::string& path) {
  std::ofstream os(path);
  require(os.good(), kMod, ErrorKind::Input, "cannot write " + path);
  auto l10 = [](const LogValue& v) { return v.zero() ? std::string("-inf") : [&] {
    std::ostringstream s;
    s << std::setprecision(17) << v.log / std::log(10.0);
    return s.str();
  }(); };
  os << "member,tau,log10_boundary_plus,log10_volume,log10_residual,log10_boundary_minus,log10_lhs,log10_rhs,ratio\n"
     << std::setprecision(17);
  for (const auto& row : r.rows) {
    const auto& s = row.sides;
    os << row.member << ',' << s.tau << ',' << l10(s.boundary_plus) << ',' << l10(s.volume) << ','
       << l10(s.residual) << ',' << l10(s.boundary_minus) << ',' << l10(s.lhs()) << ',' << l10(s.rhs()) << ','
       << s.ratio() << '\n';
  }
  os << "# tau_emp," << r.tau_emp << '\n';
  os << "# C_emp," << r.C_emp << ",relative to the listed family\n";
}

}  // namespace ibvp
