#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include "ibvp/dn_map.hpp"
#include "ibvp/error.hpp"

using namespace ibvp;

namespace {
GridPtr square(int n, int nt, double T = 1.0) { return build_grid(GridSpec::unit(2, n, nt, T)); }

NonlinearityModel monomial(const GridPtr& g, int N, double c = 1.0) {
  std::vector<Field> cs(N + 1, Field(g, 0.0));
  cs[N] = Field(g, c);
  return NonlinearityModel::polynomial(g, cs);
}

BoundaryField datum(const GridPtr& g) {
  return sample_boundary(g, [](double t, const Point& x) { return t * t * (1.0 + x[0] - 0.5 * x[1]); });
}
}  // namespace

TEST_CASE("zero problem has zero flux") {
  auto g = square(9, 5);
  auto a = MatrixCoefficient::identity(g);
  FluxRecord r = dn_apply(a, Field(g, 1.0), NonlinearityModel::zero(g), BoundaryField(g, 0.0));
  REQUIRE(r.available());
  for (double v : r.flux().values()) CHECK(v == 0.0);
}

TEST_CASE("linear reaction gives a linear DN map") {
  auto g = square(9, 9);
  auto a = MatrixCoefficient::identity(g);
  Field q = sample(g, [](double t, const Point& x) { return 1.0 + x[0] * t; });
  auto lin = NonlinearityModel::polynomial(g, {Field(g, 0.0), q});
  BoundaryField f = datum(g);
  FluxRecord r1 = dn_apply(a, Field(g, 1.0), lin, f);
  const double scale = sup_norm(r1.flux());
  for (double alpha : {2.0, -1.0}) {
    FluxRecord ra = dn_apply(a, Field(g, 1.0), lin, alpha * f);
    CHECK(sup_norm(ra.flux() - alpha * r1.flux()) <= 1e-9 * scale);
  }
}

TEST_CASE("closed-form fluxes: 1D and 2D separable solutions converge at second order") {
  auto err1 = [](int n) {
    auto g = build_grid(GridSpec::unit(1, n, n));
    auto a = MatrixCoefficient::identity(g);
    auto exact = [](double t, const Point& x) { return t * t * std::exp(x[0]); };
    Field F = sample(g, [](double t, const Point& x) { return (2 * t - t * t) * std::exp(x[0]); });
    FluxRecord r = dn_apply(a, Field(g, 1.0), NonlinearityModel::zero(g), sample_boundary(g, exact), {}, &F);
    BoundaryField want = sample_boundary(g, [&](double t, const Point& x) {
      return x[0] > 0.5 ? t * t * std::exp(1.0) : -t * t;
    });
    return sup_norm(r.flux() - want);
  };
  auto err2 = [](int n) {
    auto g = square(n, n);
    auto a = MatrixCoefficient::identity(g);
    // harmonic in space, so only the time derivative enters the source
    auto exact = [](double t, const Point& x) { return t * t * std::exp(x[0]) * std::cos(x[1]); };
    Field F = sample(g, [](double t, const Point& x) { return 2 * t * std::exp(x[0]) * std::cos(x[1]); });
    FluxRecord r = dn_apply(a, Field(g, 1.0), NonlinearityModel::zero(g), sample_boundary(g, exact), {}, &F);
    BoundaryField want(g, 0.0);
    for (int k = 0; k < g->nt(); ++k)
      for (std::size_t b = 0; b < g->boundary_size(); ++b) {
        const Point x = g->x(g->boundary_nodes()[b]);
        const Point nu = g->normal(b);
        const double t = g->t(k);
        want.at(k, b) = t * t * std::exp(x[0]) * (std::cos(x[1]) * nu[0] - std::sin(x[1]) * nu[1]);
      }
    return sup_norm(r.flux() - want);
  };
  const double a1 = err1(17), a2 = err1(33), a3 = err1(65);
  CHECK(std::log2(a2 / a3) >= 1.8);
  CHECK(a2 < a1);
  const double b1 = err2(17), b2 = err2(33);
  MESSAGE("1D " << a1 << " " << a2 << " " << a3 << "; 2D " << b1 << " " << b2);
  CHECK(std::log2(b1 / b2) >= 1.8);
}

TEST_CASE("restriction: identity, back set, tangency, algebra, rejection") {
  auto g = square(9, 5);
  auto a = MatrixCoefficient::identity(g);
  FluxRecord r = dn_apply(a, Field(g, 1.0), monomial(g, 3), datum(g));
  FluxRecord full = restrict_record(r, BoundaryRegion::full(g));
  CHECK(dn_compare(r, full).sup == 0.0);
  CHECK(dn_compare(r, full).nodes == g->boundary_size());

  auto back = BoundaryRegion::back(g, {-1.0, 0.5, 0.0});
  for (std::size_t b = 0; b < g->boundary_size(); ++b)
    if (g->x(g->boundary_nodes()[b])[0] == 0.0) CHECK(back.contains(b));

  // x0 on the extension of the bottom edge: that edge is tangent
  const Point x0{-1.0, 0.0, 0.0};
  auto both = BoundaryRegion::front(g, x0).intersect(BoundaryRegion::back(g, x0));
  auto dot = boundary_dot(*g, x0);
  std::size_t bottom = 0;
  for (std::size_t b = 0; b < g->boundary_size(); ++b) {
    CHECK(both.contains(b) == (std::abs(dot[b]) <= 1e-12));
    const Point x = g->x(g->boundary_nodes()[b]);
    if (x[1] == 0.0 && x[0] > 0.0 && x[0] < 1.0) {
      CHECK(both.contains(b));
      ++bottom;
    }
  }
  CHECK(bottom == 7);
  // generic exterior point: no tangency
  auto generic = BoundaryRegion::front(g, {-1.3, 0.37, 0.0}).intersect(BoundaryRegion::back(g, {-1.3, 0.37, 0.0}));
  CHECK(generic.empty());

  auto A = BoundaryRegion::back(g, {-1.0, 0.5, 0.0}, 0.3);
  auto B = BoundaryRegion::front(g, {0.5, -1.0, 0.0});
  FluxRecord rab = restrict_record(restrict_record(r, A), B);
  FluxRecord rc = restrict_record(r, A.intersect(B));
  for (std::size_t b = 0; b < g->boundary_size(); ++b) CHECK(rab.visible(b) == rc.visible(b));

  FluxRecord left = restrict_record(r, back);
  std::size_t outside = 0;
  for (std::size_t b = 0; b < g->boundary_size(); ++b)
    if (!back.contains(b)) {
      outside = b;
      break;
    }
  CHECK_THROWS_AS((void)left.at(1, outside), Error);
  BoundaryRegion none(g, std::vector<char>(g->boundary_size(), 0), "none");
  CHECK_THROWS_AS(restrict_record(r, none), Error);
}

TEST_CASE("classify_boundary on the unit square and cube") {
  auto g = square(9, 3);
  auto c = classify_boundary(g, {-1.0, 0.5, 0.0}, 0.0, 0.0);
  for (std::size_t b = 0; b < g->boundary_size(); ++b) {
    const Point x = g->x(g->boundary_nodes()[b]);
    if (x[0] == 0.0) CHECK(c.back.contains(b));
    if (x[0] == 1.0) CHECK(c.front.contains(b));
  }
  CHECK(c.back_eps == c.back);
  CHECK(c.front.unite(c.back).count() == g->boundary_size());

  auto s = classify_boundary(g, {-1.0, 0.5, 0.0}, 0.1, 0.05);
  CHECK(s.stable);
  CHECK(s.back.subset_of(s.back_eps));
  auto tight = classify_boundary(g, {-1.0, 0.5, 0.0}, 0.1, 0.45, 0.1);
  CHECK_FALSE(tight.stable);
  CHECK_THROWS_AS(classify_boundary(g, {0.5, 0.5, 0.0}), Error);
  CHECK_THROWS_AS(classify_boundary(g, {1.0, 0.2, 0.0}), Error);

  auto cube = build_grid(GridSpec::unit(3, 5, 2));
  auto cc = classify_boundary(cube, {-1.0, 0.0, 0.0});
  int left_face = 0, right_face = 0, tangent_faces = 0;
  for (std::size_t b = 0; b < cube->boundary_size(); ++b) {
    const Point x = cube->x(cube->boundary_nodes()[b]);
    const bool face_interior = [&] {
      int on = 0;
      for (int i = 0; i < 3; ++i) on += (x[i] == 0.0 || x[i] == 1.0);
      return on == 1;
    }();
    if (!face_interior) continue;
    if (x[0] == 0.0) left_face += cc.back.contains(b) && !cc.front.contains(b);
    if (x[0] == 1.0) right_face += cc.front.contains(b) && !cc.back.contains(b);
    if (x[1] == 0.0 || x[2] == 0.0) tangent_faces += cc.front.contains(b) && cc.back.contains(b);
  }
  CHECK(left_face == 9);
  CHECK(right_face == 9);
  CHECK(tangent_faces == 18);
  CHECK(cc.front.unite(cc.back).count() == cube->boundary_size());
}

TEST_CASE("dn_compare: self, constant shift, input mismatch") {
  auto g = square(9, 9);
  auto a = MatrixCoefficient::identity(g);
  auto b = monomial(g, 3);
  FluxRecord r = dn_apply(a, Field(g, 1.0), b, datum(g));
  CHECK(dn_compare(r, r).sup == 0.0);
  CHECK(dn_compare(r, r).l2 == 0.0);

  auto shifted = NonlinearityModel::polynomial(g, {Field(g, 1.0), Field(g, 0.0), Field(g, 0.0), Field(g, 1.0)}, false);
  FluxRecord rs = dn_apply(a, Field(g, 1.0), shifted, datum(g));
  CHECK(dn_compare(r, rs).sup > 1e-3);
  CHECK(dn_compare(r, rs).l2 > 0.0);

  FluxRecord other = dn_apply(a, Field(g, 1.0), b, 2.0 * datum(g));
  CHECK_THROWS_AS(dn_compare(r, other), Error);
}

TEST_CASE("gauge invariance of the DN map under refinement") {
  auto gap = [](int n, bool source) {
    auto g = square(n, n);
    auto a = MatrixCoefficient::identity(g);
    Field rho(g, 1.0);
    GaugeProfile p;
    p.amplitude = 0.8;
    p.time_power = 2;
    p.tilt = {0.5, -0.3, 0.0};
    auto phi = make_gauge(g, p, a);
    BoundaryField f = datum(g);
    if (!source) {
      auto b = monomial(g, 3);
      auto sb = apply_S(phi, b, a, rho);
      return dn_compare(dn_apply(a, rho, b, f), dn_apply(a, rho, sb, f)).sup;
    }
    auto d = monomial(g, 2);
    Field F = sample(g, [](double t, const Point& x) { return t * x[0] * (1 - x[0]) * x[1] * (1 - x[1]); });
    auto src = SourceModel::make(d, F);
    auto us = apply_U(phi, src, a, rho);
    return dn_compare(dn_apply(a, rho, src, f), dn_apply(a, rho, us, f)).sup;
  };
  for (bool source : {false, true}) {
    const double e1 = gap(9, source), e2 = gap(17, source), e3 = gap(33, source);
    MESSAGE((source ? "U_phi " : "S_phi ") << std::setprecision(12) << e1 << " " << e2 << " " << e3);
    CHECK(e2 < e1);
    CHECK(std::log2(e2 / e3) >= 1.0);
  }
}

TEST_CASE("bump ensemble is seeded, admissible and sized shapes x amplitudes") {
  auto g = square(9, 9);
  auto e1 = bump_ensemble(g), e2 = bump_ensemble(g);
  REQUIRE(e1.size() == 12);
  for (std::size_t i = 0; i < e1.size(); ++i) {
    CHECK(e1[i].values() == e2[i].values());
    CHECK(check_boundary_datum(e1[i]).admissible);
    CHECK(sup_norm(e1[i]) > 0.0);
  }
  EnsembleSpec other;
  other.seed = 5;
  CHECK(bump_ensemble(g, other)[0].values() != e1[0].values());
  CHECK(sup_norm(e1[2] - 4.0 * e1[0]) < 1e-14);

  auto a = MatrixCoefficient::identity(g);
  auto recs = dn_apply_ensemble(a, Field(g, 1.0), monomial(g, 3), e1, {}, nullptr, 2);
  REQUIRE(recs.size() == 12);
  FluxRecord single = dn_apply(a, Field(g, 1.0), monomial(g, 3), e1[5]);
  CHECK(recs[5].flux().values() == single.flux().values());

  const auto path = std::filesystem::temp_directory_path() / "ibvp_flux_test.csv";
  write_flux_csv(restrict_record(single, BoundaryRegion::back(g, {-1, 0.5, 0})), path.string());
  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  CHECK(header == "level,slot,value,in_region");
  CHECK(comparison_csv_rows(3, {1.0, 2.0, 4}, 0.125).find("3,l2,2,0.125") != std::string::npos);
}
