#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ibvp/carleman.hpp"
#include "ibvp/dn_map.hpp"
#include "ibvp/error.hpp"

using namespace ibvp;

namespace {
const Point kX0{-1.0, 0.5, 0.5};
constexpr double kT = 0.05;

GridPtr cube(int n, int nt, double T = kT) { return build_grid(GridSpec::unit(3, n, nt, T)); }

std::vector<CarlemanFamilyMember> family(const GridPtr& g) {
  std::vector<CarlemanFamilyMember> f;
  for (const char* r : {"poly", "poly_t2", "bump", "tilted", "sine"}) f.push_back({r, carleman_test_function(g, r)});
  return f;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(a), std::abs(b)); }
}  // namespace

TEST_CASE("zero function gives four zero integrals") {
  auto g = cube(9, 9);
  Field zero(g, 0.0);
  CarlemanSides s = carleman_sides(g, kX0, zero, zero, 10.0);
  CHECK(s.boundary_plus.zero());
  CHECK(s.volume.zero());
  CHECK(s.residual.zero());
  CHECK(s.boundary_minus.zero());
  CHECK(s.ratio() == 0.0);
}

TEST_CASE("volume integral matches an independent reference quadrature") {
  auto g = cube(33, 65);
  const double tau = 20.0;
  Field v = carleman_test_function(g, "bump");
  CarlemanSides s = carleman_sides(g, kX0, Field(g, 0.0), v, tau);
  // int_0^T t^2 exp(-a t) dt in closed form
  const double a = 2.0 * tau * tau;
  const double time = (2.0 - std::exp(-a * kT) * (a * kT * (a * kT + 2.0) + 2.0)) / (a * a * a);
  // int exp(-2 tau psi) prod (x(1-x))^4 by 4-point Gauss on 96^3 cells
  const double gx[4] = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526};
  const double gw[4] = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538};
  const int M = 96;
  std::vector<double> xs, ws;
  for (int c = 0; c < M; ++c)
    for (int k = 0; k < 4; ++k) {
      xs.push_back((c + 0.5 + 0.5 * gx[k]) / M);
      ws.push_back(0.5 * gw[k] / M);
    }
  auto f = [](double x) { return std::pow(x * (1.0 - x), 4); };
  double space = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = 0; j < xs.size(); ++j) {
      const double fij = ws[i] * ws[j] * f(xs[i]) * f(xs[j]);
      for (std::size_t k = 0; k < xs.size(); ++k) {
        const double r = std::sqrt((xs[i] + 1.0) * (xs[i] + 1.0) + (xs[j] - 0.5) * (xs[j] - 0.5) +
                                   (xs[k] - 0.5) * (xs[k] - 0.5));
        space += fij * ws[k] * f(xs[k]) * std::exp(-2.0 * tau * r);
      }
    }
  MESSAGE("volume " << s.volume.value() << " reference " << time * space);
  CHECK(rel(s.volume.value(), time * space) < 1e-3);
}

TEST_CASE("golden ratio for the polynomial example agrees across two resolutions") {
  auto ratio = [](int n, int nt) {
    auto g = cube(n, nt);
    Field v = carleman_test_function(g, "poly");
    return carleman_sides(g, kX0, Field(g, 0.0), v, 20.0).ratio();
  };
  const double coarse = ratio(17, 33), fine = ratio(33, 65);
  MESSAGE("ratio at tau = 20: " << coarse << " (17^3 x 33) " << fine << " (33^3 x 65)");
  CHECK(std::isfinite(fine));
  CHECK(fine > 0.0);
  CHECK(rel(coarse, fine) < 0.02);
  CHECK(fine == doctest::Approx(3.89183e-4).epsilon(1e-5));
}

TEST_CASE("quadratic homogeneity is exact") {
  auto g = cube(17, 33);
  Field q = sample(g, [](double t, const Point& x) { return 1.0 + x[0] * t; });
  Field v = carleman_test_function(g, "tilted");
  CarlemanSides a = carleman_sides(g, kX0, q, v, 10.0);
  CarlemanSides b = carleman_sides(g, kX0, q, 2.0 * v, 10.0);
  const double l4 = std::log(4.0);
  CHECK(b.boundary_plus.log - a.boundary_plus.log == doctest::Approx(l4).epsilon(1e-12));
  CHECK(b.volume.log - a.volume.log == doctest::Approx(l4).epsilon(1e-12));
  CHECK(b.residual.log - a.residual.log == doctest::Approx(l4).epsilon(1e-12));
  CHECK(b.boundary_minus.log - a.boundary_minus.log == doctest::Approx(l4).epsilon(1e-12));
  CHECK(b.ratio() == doctest::Approx(a.ratio()).epsilon(1e-12));
}

TEST_CASE("log-space evaluation reproduces direct sums and survives underflow") {
  auto g = cube(17, 33);
  Field q(g, 0.5);
  Field v = carleman_test_function(g, "sine");
  CarlemanOptions direct;
  direct.log_space = false;
  for (double tau : {2.0, 5.0, 10.0}) {
    CarlemanSides l = carleman_sides(g, kX0, q, v, tau);
    CarlemanSides d = carleman_sides(g, kX0, q, v, tau, direct);
    CHECK(rel(l.boundary_plus.value(), d.boundary_plus.value()) < 1e-10);
    CHECK(rel(l.volume.value(), d.volume.value()) < 1e-10);
    CHECK(rel(l.residual.value(), d.residual.value()) < 1e-10);
    CHECK(rel(l.boundary_minus.value(), d.boundary_minus.value()) < 1e-10);
  }
  // exp(-2 tau psi) < 1e-347 on the whole box: direct sums underflow to zero
  auto gl = cube(9, 4097, 1.0);
  Field vl = carleman_test_function(gl, "poly");
  CarlemanSides l = carleman_sides(gl, kX0, Field(gl, 0.0), vl, 400.0);
  CarlemanSides d = carleman_sides(gl, kX0, Field(gl, 0.0), vl, 400.0, direct);
  CHECK(std::isfinite(l.volume.log));
  CHECK(l.volume.log < std::log(1e-300));
  CHECK(d.volume.zero());
  CHECK(std::isfinite(l.ratio()));
  CHECK(l.ratio() > 0.0);
}

TEST_CASE("each weighted integral is nonincreasing in tau") {
  auto g = cube(17, 33);
  Field q = sample(g, [](double t, const Point& x) { return 2.0 + x[1] - t; });
  for (const auto& m : family(g)) {
    std::vector<CarlemanSides> s;
    for (double tau : {5.0, 10.0, 20.0, 40.0}) s.push_back(carleman_sides(g, kX0, q, m.v, tau));
    for (std::size_t j = 1; j < s.size(); ++j) {
      CAPTURE(m.name);
      CAPTURE(j);
      CHECK(s[j].boundary_plus.log <= s[j - 1].boundary_plus.log);
      CHECK(s[j].volume.log <= s[j - 1].volume.log);
      CHECK(s[j].residual.log <= s[j - 1].residual.log);
      CHECK(s[j].boundary_minus.log <= s[j - 1].boundary_minus.log);
    }
  }
}

TEST_CASE("family sweep: ratio bounded uniformly over tau, and the onset moves with |q|") {
  auto g = cube(33, 65);
  auto fam = family(g);
  const std::vector<double> taus{5, 10, 20, 40};
  Field q = sample(g, [](double t, const Point& x) { return 1.0 + x[0] + t; });
  CarlemanReport rep = carleman_sweep(g, kX0, q, fam, taus, 2);
  for (std::size_t m = 0; m < fam.size(); ++m)
    for (std::size_t j = 0; j < taus.size(); ++j) {
      const double r = rep.row(m, j).sides.ratio();
      MESSAGE(fam[m].name << " tau " << taus[j] << " ratio " << r);
      CHECK(std::isfinite(r));
      CHECK(r > 0.0);
    }
  MESSAGE("tau_emp " << rep.tau_emp << " C_emp " << rep.C_emp);
  CHECK(rep.plateau_reached);
  CHECK(std::isfinite(rep.C_emp));

  CarlemanReport big = carleman_sweep(g, kX0, 10.0 * q, fam, taus, 2);
  MESSAGE("q x 10: tau_emp " << big.tau_emp << " C_emp " << big.C_emp);
  CHECK(big.tau_emp >= rep.tau_emp);

  // no flux through Gamma-: the estimate still holds with the family constant
  Field vi = carleman_test_function(g, "interior");
  for (double tau : taus) {
    CarlemanSides s = carleman_sides(g, kX0, q, vi, tau);
    CHECK(s.boundary_minus.zero());
    CHECK_FALSE(s.boundary_plus.zero());
    if (tau >= rep.tau_emp) CHECK(s.ratio() <= rep.C_emp);
  }

  const auto path = std::filesystem::temp_directory_path() / "ibvp_carleman.csv";
  write_carleman_csv(rep, path.string());
  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  CHECK(header == "member,tau,log10_boundary_plus,log10_volume,log10_residual,log10_boundary_minus,log10_lhs,"
                  "log10_rhs,ratio");
}

TEST_CASE("face signs agree with the boundary classification") {
  auto g = cube(9, 3);
  for (const Point& x0 : {kX0, Point{2.0, 0.3, -0.5}, Point{0.5, 0.5, 1.5}}) {
    const auto signs = face_signs(*g, x0);
    auto c = classify_boundary(g, x0);
    for (std::size_t b = 0; b < g->boundary_size(); ++b) {
      const auto idx = g->multi(g->boundary_nodes()[b]);
      int on = 0, face = -1;
      for (int a = 0; a < 3; ++a)
        if (idx[a] == 0 || idx[a] == g->count(a) - 1) {
          ++on;
          face = 2 * a + (idx[a] == 0 ? 0 : 1);
        }
      if (on != 1) continue;  // edges and corners carry averaged normals
      if (signs[face] > 0) CHECK((c.front.contains(b) && !c.back.contains(b)));
      if (signs[face] < 0) CHECK((c.back.contains(b) && !c.front.contains(b)));
      if (signs[face] == 0) CHECK((c.back.contains(b) && c.front.contains(b)));
    }
  }
}

TEST_CASE("preconditions are enforced") {
  auto g = cube(9, 9);
  Field q(g, 0.0);
  Field bad = sample(g, [](double t, const Point&) { return 1.0 + t; });
  CHECK_THROWS_AS(carleman_sides(g, kX0, q, bad, 5.0), Error);
  Field v = carleman_test_function(g, "poly");
  CHECK_THROWS_AS(carleman_sides(g, {0.5, 0.5, 0.5}, q, v, 5.0), Error);
  auto sq = build_grid(GridSpec::unit(2, 9, 9));
  Field v2(sq, 0.0);
  try {
    carleman_sides(sq, kX0, Field(sq, 0.0), v2, 5.0);
    FAIL("expected a capability error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Capability);
  }
  CHECK_THROWS_AS(carleman_test_function(g, "nope"), Error);
}
