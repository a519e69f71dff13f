#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <bit>
#include <cmath>
#include <filesystem>
#include <random>

#include "ibvp/error.hpp"
#include "ibvp/linearization.hpp"

using namespace ibvp;

namespace {
GridPtr square(int n, int nt, double T = 1.0) { return build_grid(GridSpec::unit(2, n, nt, T)); }

NonlinearityModel monomial(const GridPtr& g, int N, double c = 1.0) {
  std::vector<Field> cs(N + 1, Field(g, 0.0));
  cs[N] = Field(g, c);
  return NonlinearityModel::polynomial(g, cs);
}

BoundaryField dir(const GridPtr& g, double cx, double cy) {
  return sample_boundary(g, [=](double t, const Point& x) {
    return t * t * std::exp(-4.0 * ((x[0] - cx) * (x[0] - cx) + (x[1] - cy) * (x[1] - cy)));
  });
}

double rel(const Field& a, const Field& b) { return sup_norm(a - b) / sup_norm(b); }

// fit slope of log err against log s
double slope(double s1, double e1, double s2, double e2) { return std::log(e1 / e2) / std::log(s1 / s2); }
}  // namespace

TEST_CASE("stencil weights sum to zero and differentiate multilinear functions exactly") {
  for (auto type : {StencilType::ForwardProduct, StencilType::CentralProduct})
    for (int m = 1; m <= 4; ++m) {
      std::vector<double> steps;
      for (int i = 0; i < m; ++i) steps.push_back(0.1 * (i + 1));
      auto st = LinearizationStencil::make(m, steps, type);
      CHECK(st.corners.size() == (1u << m));
      double wsum = 0.0;
      for (double w : st.weights) wsum += w;
      CHECK(std::abs(wsum) < 1e-9);
      const double prod = st.apply([](const std::vector<double>& s) {
        double p = 3.0;
        for (double x : s) p *= x;
        return p + 2.0 * s[0] - 1.0;  // lower-order multilinear terms are annihilated
      });
      CHECK(prod == doctest::Approx(m == 1 ? 5.0 : 3.0).epsilon(1e-12));
    }
  CHECK_THROWS_AS(LinearizationStencil::make(2, {0.1}, StencilType::CentralProduct), Error);
  CHECK_THROWS_AS(LinearizationStencil::make(1, {0.0}, StencilType::CentralProduct), Error);
}

TEST_CASE("set partitions follow the Bell numbers") {
  const std::size_t bell[] = {1, 1, 2, 5, 15, 52, 203};
  for (int n = 1; n <= 6; ++n) CHECK(set_partitions((1u << n) - 1).size() == bell[n]);
  for (const auto& p : set_partitions(0b1011)) {
    IndexSet u = 0;
    for (IndexSet b : p) {
      CHECK((u & b) == 0);
      u |= b;
    }
    CHECK(u == 0b1011u);
  }
}

TEST_CASE("Faa di Bruno right-hand sides at orders 2 and 3") {
  auto g = square(7, 4);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(-1, 1);
  auto rnd = [&] {
    Field f(g, 0.0);
    for (double& v : f.values()) v = U(rng);
    return f;
  };
  Field u0 = rnd();
  std::map<IndexSet, Field> W{{1, rnd()}, {2, rnd()}, {4, rnd()}, {3, rnd()}, {5, rnd()}, {6, rnd()}};
  auto b = NonlinearityModel::polynomial(g, {Field(g, 0.0), Field(g, 0.5), Field(g, 1.5), Field(g, -2.0),
                                             Field(g, 0.7)});
  Field H2 = faa_di_bruno_rhs(b, u0, W, 3);
  Field H3 = faa_di_bruno_rhs(b, u0, W, 7);
  for (std::size_t i = 0; i < g->size(); ++i) {
    const double u = u0[i];
    const double d2 = 3.0 - 12.0 * u + 8.4 * u * u, d3 = -12.0 + 16.8 * u;
    CHECK(H2[i] == doctest::Approx(-d2 * W[1][i] * W[2][i]).epsilon(1e-13));
    const double want = -d3 * W[1][i] * W[2][i] * W[4][i] -
                        d2 * (W[1][i] * W[6][i] + W[2][i] * W[5][i] + W[4][i] * W[3][i]);
    CHECK(H3[i] == doctest::Approx(want).epsilon(1e-12));
  }
  auto lin = NonlinearityModel::polynomial(g, {Field(g, 0.0), Field(g, 2.0)});
  CHECK(sup_norm(faa_di_bruno_rhs(lin, u0, W, 7)) == 0.0);
  std::map<IndexSet, Field> partial{{1, rnd()}, {2, rnd()}, {4, rnd()}};
  CHECK_THROWS_AS(faa_di_bruno_rhs(b, u0, partial, 7), Error);
}

TEST_CASE("first linearization: zero direction, linear superposition, cubic O(s)") {
  auto g = square(9, 9);
  auto a = MatrixCoefficient::identity(g);
  Field rho(g, 1.0);
  BoundaryField f0 = dir(g, 0.0, 0.5), h = dir(g, 1.0, 0.3);

  auto cube = monomial(g, 3);
  SolveReport base = solve_ibvp(a, rho, cube, f0);
  REQUIRE(base.converged);
  CHECK(sup_norm(first_linearized(a, rho, cube, base.u, BoundaryField(g, 0.0))) == 0.0);

  Field q = sample(g, [](double t, const Point& x) { return 1.0 + t * x[1]; });
  auto lin = NonlinearityModel::polynomial(g, {Field(g, 0.0), q});
  SolveReport l0 = solve_ibvp(a, rho, lin, f0), l1 = solve_ibvp(a, rho, lin, f0 + h);
  Field vlin = first_linearized(a, rho, lin, l0.u, h);
  CHECK(sup_norm(l1.u - l0.u - vlin) <= 1e-9 * sup_norm(vlin));

  Field v = first_linearized(a, rho, cube, base.u, h);
  SolveOptions tight;
  tight.newton_tol = 1e-13;
  auto err = [&](double s) {
    SolveReport r = solve_ibvp(a, rho, cube, f0 + s * h, tight);
    SolveReport r0 = solve_ibvp(a, rho, cube, f0, tight);
    return sup_norm(1.0 / s * (r.u - r0.u) - v);
  };
  const double e1 = err(1e-2), e2 = err(5e-3);
  CHECK(slope(1e-2, e1, 5e-3, e2) == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("second order with b = mu^2 at zero base solves the heat equation with -2 v1 v2") {
  auto g = square(9, 9);
  auto a = MatrixCoefficient::identity(g);
  Field rho(g, 1.0);
  auto sq = monomial(g, 2);
  Field u0(g, 0.0);
  BoundaryField h1 = dir(g, 0.0, 0.5), h2 = dir(g, 0.5, 1.0);
  auto L = higher_linearized(a, rho, sq, u0, {h1, h2});
  Field F = -2.0 * hadamard(L.v[0], L.v[1]);
  Field w = solve_linear(a, rho, Field(g, 0.0), &F, nullptr, false);
  CHECK(sup_norm(L.top() - w) <= 1e-13 * sup_norm(w));
  CHECK(sup_norm(L.H - F) == 0.0);

  auto zero = higher_linearized(a, rho, monomial(g, 3), u0,
                                {BoundaryField(g, 0.0), BoundaryField(g, 0.0), BoundaryField(g, 0.0)});
  for (const auto& [set, f] : zero.w) CHECK(sup_norm(f) == 0.0);
}

TEST_CASE("cross-route: finite differences against direct solves, orders 1 to 3") {
  auto g = square(9, 9);
  auto a = MatrixCoefficient::identity(g);
  Field rho(g, 1.0);
  auto b = NonlinearityModel::polynomial(g, {Field(g, 0.0), Field(g, 0.0), Field(g, 0.5), Field(g, 1.0)});
  BoundaryField f0 = 0.5 * dir(g, 0.0, 0.5);
  std::vector<BoundaryField> hs{dir(g, 1.0, 0.3), dir(g, 0.5, 0.0), dir(g, 0.2, 1.0)};
  SolveOptions tight;
  tight.newton_tol = 1e-14;
  SolveReport base = solve_ibvp(a, rho, b, f0, tight);
  REQUIRE(base.converged);
  for (int order = 1; order <= 3; ++order) {
    std::vector<BoundaryField> h(hs.begin(), hs.begin() + order);
    auto direct = higher_linearized(a, rho, b, base.u, h);
    for (auto type : {StencilType::ForwardProduct, StencilType::CentralProduct}) {
      FdOptions o;
      o.type = type;
      o.solve = tight;
      const double s1 = type == StencilType::ForwardProduct ? 2e-2 : 1e-1;
      o.s = s1;
      auto fd1 = fd_linearized(a, rho, b, f0, h, o);
      o.s = s1 / 2;
      auto fd2 = fd_linearized(a, rho, b, f0, h, o);
      const double e1 = rel(fd1.top(), direct.top()), e2 = rel(fd2.top(), direct.top());
      const double p = slope(s1, e1, s1 / 2, e2);
      auto frel = [&](const BoundaryField& x) { return sup_norm(x - direct.flux) / sup_norm(direct.flux); };
      const double pf = slope(s1, frel(fd1.flux), s1 / 2, frel(fd2.flux));
      const double need = type == StencilType::ForwardProduct ? 1.0 : 1.9;
      MESSAGE("order " << order << (type == StencilType::ForwardProduct ? " forward " : " central ") << e1 << " "
                       << e2 << " slope " << p << " flux slope " << pf);
      CHECK(p >= need);
      CHECK(pf >= need);
    }
  }
}

TEST_CASE("linear b: order-1 finite difference is exact for any step") {
  auto g = square(9, 9);
  auto a = MatrixCoefficient::identity(g);
  Field rho(g, 1.0);
  auto lin = NonlinearityModel::polynomial(g, {Field(g, 0.0), Field(g, 3.0)});
  BoundaryField h = dir(g, 1.0, 0.3);
  Field v = first_linearized(a, rho, lin, Field(g, 0.0), h);
  for (double s : {1e-3, 1e-1, 10.0}) {
    FdOptions o;
    o.s = s;
    o.type = StencilType::ForwardProduct;
    CHECK(sup_norm(fd_linearized(a, rho, lin, BoundaryField(g, 0.0), {h}, o).top() - v) <= 1e-9 * sup_norm(v));
  }
}

TEST_CASE("symmetry in the directions and vanishing traces") {
  auto g = square(9, 9);
  auto a = MatrixCoefficient::identity(g);
  Field rho(g, 1.0);
  auto b = NonlinearityModel::polynomial(g, {Field(g, 0.0), Field(g, 1.0), Field(g, 1.0), Field(g, 1.0)});
  SolveReport base = solve_ibvp(a, rho, b, dir(g, 0.0, 0.0));
  BoundaryField h1 = dir(g, 1.0, 0.3), h2 = dir(g, 0.5, 0.0), h3 = dir(g, 0.0, 1.0);
  auto L12 = higher_linearized(a, rho, b, base.u, {h1, h2, h3});
  auto L21 = higher_linearized(a, rho, b, base.u, {h2, h1, h3});
  CHECK(sup_norm(L12.w.at(3) - L21.w.at(3)) <= 1e-10);
  CHECK(sup_norm(L12.top() - L21.top()) <= 1e-10);
  for (const auto& [set, f] : L12.w) {
    CHECK(std::popcount(set) >= 2);
    for (int k = 0; k < g->nt(); ++k) {
      for (std::size_t bn : g->boundary_nodes()) CHECK(f.at(k, bn) == 0.0);
    }
    for (std::size_t s = 0; s < g->spatial_size(); ++s) CHECK(f.at(0, s) == 0.0);
  }
  const auto path = std::filesystem::temp_directory_path() / "ibvp_lin_dump";
  write_linearized(L12, path.string());
  CHECK(std::filesystem::exists(path / "manifest.json"));
  CHECK(std::filesystem::exists(path / "w_7.bin"));
}

TEST_CASE("adjoint solution: zero data and time reversal") {
  auto g = square(9, 9);
  auto a = MatrixCoefficient::identity(g);
  Field rho(g, 1.0);
  Field q(g, 0.0);
  CHECK(sup_norm(adjoint_solution(a, rho, q)) == 0.0);
  Field F = sample(g, [](double t, const Point& x) { return std::sin(2 * t) * x[0] * x[1]; });
  Field Fr(g, 0.0);
  const int nt = g->nt();
  for (int k = 0; k < nt; ++k)
    for (std::size_t s = 0; s < g->spatial_size(); ++s) Fr.at(k, s) = F.at(nt - 1 - k, s);
  Field w = adjoint_solution(a, rho, q, &Fr);
  Field v = solve_linear(a, rho, q, &F, nullptr, false);
  double d = 0.0;
  for (int k = 0; k < nt; ++k)
    for (std::size_t s = 0; s < g->spatial_size(); ++s) d = std::max(d, std::abs(w.at(nt - 1 - k, s) - v.at(k, s)));
  CHECK(d <= 1e-9);
}

TEST_CASE("stencil divergence is reported with the offending corner") {
  auto g = square(9, 21);
  auto a = MatrixCoefficient::identity(g);
  BoundaryField h = sample_boundary(g, [](double t, const Point&) { return t * t; });
  FdOptions o;
  o.s = 100.0;
  o.normalize = false;
  o.solve.homotopy.clear();
  try {
    fd_linearized(a, Field(g, 1.0), monomial(g, 2, -1.0), BoundaryField(g, 0.0), {h}, o);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("corner 1") != std::string::npos);
    CHECK(e.kind() == ErrorKind::Solver);
  }
}
