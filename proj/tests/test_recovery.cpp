#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numbers>

#include "ibvp/error.hpp"
#include "ibvp/forward.hpp"
#include "ibvp/recovery.hpp"

using namespace ibvp;
using std::numbers::pi;

namespace {

// Relative L2 error over interior nodes and levels 1..nt-1.
double relint(const Field& est, const Field& truth) {
  const auto& g = *truth.grid();
  double num = 0.0, den = 0.0;
  for (int k = 1; k < g.nt(); ++k)
    for (auto s : g.interior_nodes()) {
      const double w = g.omega_weights()[s], d = est.at(k, s) - truth.at(k, s);
      num += w * d * d;
      den += w * truth.at(k, s) * truth.at(k, s);
    }
  return std::sqrt(num / std::max(den, 1e-300));
}

double l2int(const Field& f) {
  const auto& g = *f.grid();
  double acc = 0.0;
  for (int k = 1; k < g.nt(); ++k)
    for (auto s : g.interior_nodes()) acc += g.omega_weights()[s] * g.dt() * f.at(k, s) * f.at(k, s);
  return std::sqrt(acc);
}

struct Pair {
  GridPtr G;
  MatrixCoefficient a;
  Field rho, q1, q2;
};

Pair linear_pair(int n, int nt) {
  Pair p;
  p.G = build_grid(GridSpec::unit(2, n, nt));
  p.a = MatrixCoefficient::identity(p.G);
  p.rho = Field(p.G, 1.0);
  p.q1 = sample(p.G, [](double, const Point& x) { return 1.0 + 0.5 * std::sin(pi * x[0]) * std::sin(pi * x[1]); });
  p.q2 = sample(p.G, [](double, const Point& x) {
    return 1.0 + 2.0 * std::exp(-((x[0] - 0.6) * (x[0] - 0.6) + (x[1] - 0.4) * (x[1] - 0.4)) / 0.05);
  });
  return p;
}

NonlinearityModel linear(const GridPtr& G, const Field& q) { return NonlinearityModel::polynomial(G, {Field(G, 0.0), q}); }

BoundaryField ramp_datum(const GridPtr& G) {
  return sample_boundary(G, [](double t, const Point& x) { return t * t * (1.0 + x[0]); });
}

}  // namespace

TEST_CASE("oracle: deterministic answers and an enforced budget") {
  auto G = build_grid(GridSpec::unit(2, 9, 9));
  auto a = MatrixCoefficient::identity(G);
  Field rho(G, 1.0);
  DNOracle o("cubic", a, rho, NonlinearityModel::polynomial(G, {Field(G, 0.0), Field(G, 0.0), Field(G, 0.0), Field(G, 1.0)}), 2);
  const BoundaryField f = ramp_datum(G);
  const FluxRecord r1 = o.query(f), r2 = o.query(f);
  CHECK(dn_compare(r1, r2).sup == 0.0);
  CHECK(o.calls() == 2);
  try {
    o.query(f);
    FAIL("expected budget exhaustion");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Budget);
  }
  CHECK(o.calls() == 2);
}

TEST_CASE("recovery runs out of budget with a Budget error") {
  auto p = linear_pair(9, 17);
  DNOracle o("q1", p.a, p.rho, linear(p.G, p.q1), 10);
  RecoveryOptions ro;
  ro.basis.m = 3;
  CHECK_THROWS_WITH_AS(recover_absolute(o, p.a, p.rho, BoundaryField(p.G, 0.0), ro), doctest::Contains("budget"), Error);
}

TEST_CASE("too few probes for the basis is an explicit rank deficiency") {
  auto p = linear_pair(9, 17);
  DNOracle o("q1", p.a, p.rho, linear(p.G, p.q1));
  RecoveryOptions ro;
  ro.probes.sources = 1;
  ro.probes.beams = 2;
  try {
    recover_absolute(o, p.a, p.rho, BoundaryField(p.G, 0.0), ro);
    FAIL("expected rank deficiency");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Numeric);
    CHECK(std::string(e.what()).find("rank deficiency") != std::string::npos);
  }
}

TEST_CASE("linear pair: first-order difference within 10% and identical oracles at the noise floor") {
  auto p = linear_pair(33, 33);
  DNOracle o1("q1", p.a, p.rho, linear(p.G, p.q1)), o2("q2", p.a, p.rho, linear(p.G, p.q2));
  RecoveryOptions ro;
  const TaylorRecovery tr = recover_taylor(o1, o2, p.a, p.rho, BoundaryField(p.G, 0.0), 1, ro);
  const double err = relint(tr.delta[0], p.q2 - p.q1);
  MESSAGE("delta_1 error " << err << " noise floor " << tr.noise_floor[0]);
  CHECK(err <= 0.10);
  CHECK(tr.noise_floor[0] > 0.0);
  CHECK(tr.first.diagnostics[0].sigma_min > 0.0);

  DNOracle o1b("q1-copy", p.a, p.rho, linear(p.G, p.q1));
  const TaylorRecovery same = recover_taylor(o1, o1b, p.a, p.rho, BoundaryField(p.G, 0.0), 1, ro);
  CHECK(l2int(same.delta[0]) < 3.0 * same.noise_floor[0]);
}

TEST_CASE("time-dependent potential in the spline basis") {
  auto G = build_grid(GridSpec::unit(2, 17, 65));
  auto a = MatrixCoefficient::identity(G);
  Field rho(G, 1.0);
  const Field q = sample(G, [](double t, const Point& x) { return 1.0 + 2.0 * t * (1.0 + x[0] * x[1]); });
  DNOracle o("qt", a, rho, linear(G, q));
  RecoveryOptions ro;
  for (int i = 0; i < 7; ++i) ro.slice_times.push_back((i + 1.0) / 8.0);
  const RecoveredModel r = recover_absolute(o, a, rho, BoundaryField(G, 0.0), ro);
  const double err = relint(r.D[0], q);
  MESSAGE("time-dependent q error " << err);
  CHECK(err <= 0.01);
}

TEST_CASE("order two: injected lower orders reproduce the recursion") {
  auto G = build_grid(GridSpec::unit(2, 17, 17));
  auto a = MatrixCoefficient::identity(G);
  Field rho(G, 1.0);
  const Field p2 = sample(G, [](double, const Point& x) { return 1.0 + 0.5 * x[0]; });
  DNOracle o("quad", a, rho, NonlinearityModel::polynomial(G, {Field(G, 0.0), Field(G, 1.0), p2}));
  RecoveryOptions ro;
  ro.basis.m = 6;
  ro.K = 2;
  const RecoveredModel full = recover_absolute(o, a, rho, BoundaryField(G, 0.0), ro);
  REQUIRE(full.order() == 2);
  const std::vector<Field> lower{full.D[0]};
  const RecoveredModel again = recover_absolute(o, a, rho, BoundaryField(G, 0.0), ro, &lower);
  CHECK(l2int(again.D[0] - full.D[0]) == 0.0);
  CHECK(l2int(again.D[1] - full.D[1]) <= 1e-8 * std::max(1.0, l2int(full.D[1])));
  const double e2 = relint(full.D[1], 2.0 * p2);
  MESSAGE("D_2 error " << e2);
  CHECK(e2 <= 0.15);
}

TEST_CASE("assembly: true coefficients rebuild the hidden model, zeros give the zero model") {
  auto G = build_grid(GridSpec::unit(2, 17, 33));
  auto a = MatrixCoefficient::identity(G);
  Field rho(G, 1.0);
  const Field q = sample(G, [](double, const Point& x) { return 1.0 + x[1]; });
  const auto b = NonlinearityModel::polynomial(G, {Field(G, 0.0), q, Field(G, 1.0)});
  const SolveReport sr = solve_ibvp(a, rho, b, ramp_datum(G));
  REQUIRE(sr.converged);
  const Field& u = sr.u;
  const auto rep = assemble_representative({q + 2.0 * u, Field(G, 2.0)}, u, a, rho);
  const double d = relative_gauge_distance(rep, b, Field(G, 0.0), a, rho);
  MESSAGE("relative distance of the rebuilt model " << d);
  // residual of the centered versus backward time difference only
  CHECK(d <= 5.0 * G->dt());

  const auto z = assemble_representative({Field(G, 0.0)}, Field(G, 0.0), a, rho);
  for (double mu : {-1.0, 0.0, 0.7})
    for (int k : {1, 16, 32})
      for (auto s : G->interior_nodes()) CHECK(z.eval(k, s, mu, 0) == 0.0);
}

TEST_CASE("polynomial breaking: compliant pair is broken, a hidden shift is reported") {
  auto G = build_grid(GridSpec::unit(2, 17, 17));
  auto a = MatrixCoefficient::identity(G);
  Field rho(G, 1.0);
  const Field q = sample(G, [](double, const Point& x) { return 1.0 + x[0] * x[1]; });
  const Field lead = sample(G, [](double, const Point& x) { return 1.0 + 0.5 * x[0]; });
  const auto b2 = NonlinearityModel::polynomial(G, {Field(G, 0.0), q, lead});
  BreakSideData side;
  side.N = 2;

  const auto b1 = NonlinearityModel::polynomial(G, {Field(G, 0.0), q, Field(G, 1.0)});
  const GaugeVerdict v = break_gauge(b1, b2, BreakMode::Polynomial, side, a, rho);
  CHECK(v.verdict == Verdict::Broken);
  CHECK(v.phi_l2 == 0.0);
  for (const auto& [name, ok] : v.conditions) CHECK_MESSAGE(ok, name);

  const GaugeFunction phi = make_gauge(G, GaugeProfile{}, a);
  const auto shifted = apply_S(phi, b2, a, rho);
  side.assert_hypotheses = false;
  const GaugeVerdict w = break_gauge(shifted, b2, BreakMode::Polynomial, side, a, rho);
  CHECK(w.verdict == Verdict::Equivalent);
  CHECK_FALSE(w.conditions.at("c3b"));
  CHECK(relint(w.phi, phi.phi) <= 1e-10);
  CHECK(w.certificate <= 1e-10);
  side.assert_hypotheses = true;
  CHECK(break_gauge(shifted, b2, BreakMode::Polynomial, side, a, rho).verdict == Verdict::HypothesesViolated);
  CHECK(w.to_json().find("\"verdict\": \"gauge-equivalent\"") != std::string::npos);
}

TEST_CASE("breaking modes: linear potential, structure check, mode names") {
  auto p = linear_pair(9, 17);
  BreakSideData side;
  const GaugeVerdict v = break_gauge(linear(p.G, p.q1), linear(p.G, p.q1), BreakMode::LinearPotential, side, p.a, p.rho);
  CHECK(v.verdict == Verdict::Broken);
  CHECK(l2_norm(v.potential_difference) == 0.0);
  const GaugeVerdict d = break_gauge(linear(p.G, p.q1), linear(p.G, p.q2), BreakMode::LinearPotential, side, p.a, p.rho);
  CHECK(relint(d.potential_difference, p.q2 - p.q1) <= 1e-14);

  const GaugeVerdict s = break_gauge(linear(p.G, p.q1), linear(p.G, p.q2), BreakMode::Separated, side, p.a, p.rho);
  CHECK(s.verdict == Verdict::HypothesesViolated);
  CHECK_FALSE(s.conditions.at("structure"));

  for (BreakMode m : {BreakMode::Prescribed, BreakMode::SourceTime, BreakMode::Polynomial, BreakMode::Separated,
                      BreakMode::Spatial, BreakMode::LinearPotential})
    CHECK(parse_break_mode(to_string(m)) == m);
  CHECK_THROWS_AS(parse_break_mode("none"), Error);
}

TEST_CASE("assembled representatives of a hidden gauge pair") {
  auto G = build_grid(GridSpec::unit(2, 17, 17));
  auto a = MatrixCoefficient::identity(G);
  Field rho(G, 1.0);
  const Field q = sample(G, [](double, const Point& x) { return 1.0 + 0.5 * std::sin(pi * x[0]) * std::sin(pi * x[1]); });
  const auto b = NonlinearityModel::polynomial(G, {Field(G, 0.0), q});
  GaugeProfile prof;
  prof.amplitude = 0.5;
  const GaugeFunction phi = make_gauge(G, prof, a);
  const auto Sb = apply_S(phi, b, a, rho);
  DNOracle o1("b", a, rho, b), o2("Sb", a, rho, Sb);
  const BoundaryField f0 = ramp_datum(G);
  RecoveryOptions ro;
  ro.basis.m = 6;
  const TaylorRecovery tr = recover_taylor(o1, o2, a, rho, f0, 1, ro);
  const Field u1 = o1.base_state(f0), u2 = o2.base_state(f0);
  // Sb shifts the solution by -phi
  CHECK(relint(u1 - u2, phi.phi) <= 1e-6);
  RecoveredModel m1 = tr.first, m2 = tr.second;
  m1.u0 = u1;
  m2.u0 = u2;
  const auto r1 = assemble_representative(m1, a, rho), r2 = assemble_representative(m2, a, rho);
  const double dist = relative_gauge_distance(r2, r1, u1 - u2, a, rho);
  MESSAGE("relative gauge distance " << dist);
  CHECK(dist <= 0.05);
}

TEST_CASE("partial data: restriction to a back-set neighborhood degrades the recovery") {
  auto p = linear_pair(33, 33);
  RecoveryOptions ro;
  auto run = [&](const BoundaryRegion* region) {
    DNOracle o1("q1", p.a, p.rho, linear(p.G, p.q1)), o2("q2", p.a, p.rho, linear(p.G, p.q2));
    if (region) {
      o1.restrict_to(*region);
      o2.restrict_to(*region);
    }
    const TaylorRecovery tr = recover_taylor(o1, o2, p.a, p.rho, BoundaryField(p.G, 0.0), 1, ro);
    return std::pair{relint(tr.delta[0], p.q2 - p.q1), tr.second.diagnostics[0].sigma_min};
  };
  const auto cls = classify_boundary(p.G, {-0.5, -0.5, 0.0}, 0.0, 0.0, 0.1);
  REQUIRE(cls.tilde.count() < BoundaryRegion::full(p.G).count());
  const auto [ef, sf] = run(nullptr);
  const auto [ep, sp] = run(&cls.tilde);
  MESSAGE("full " << ef << " partial " << ep << " sigma_min " << sf << " vs " << sp);
  CHECK(ep >= 0.99 * ef);
  CHECK(sp <= sf);
  CHECK(ep <= 0.10);
}

TEST_CASE("inverse source: quadratic d splits, linear d is only gauge-determined") {
  auto G = build_grid(GridSpec::unit(2, 17, 65));
  auto a = MatrixCoefficient::identity(G);
  Field rho(G, 1.0);
  const Field F = sample(G, [](double t, const Point& x) {
    const double sx = std::sin(pi * x[0]), sy = std::sin(pi * x[1]);
    return 5.0 * t * sx * sx * sy * sy;
  });
  RecoveryOptions ro;
  ro.basis.m = 6;
  for (int i = 0; i < 11; ++i) ro.slice_times.push_back((i + 1.0) / 12.0);
  SourceSplitSide side;
  side.N = 2;
  {
    DNOracle o("quad", a, rho, SourceModel::make(NonlinearityModel::polynomial(G, {Field(G, 0.0), Field(G, 0.0), Field(G, 1.0)}), F));
    const SourceEstimate est = inverse_source(o, a, rho, BoundaryField(G, 0.0), 2, ro, side);
    REQUIRE(est.verdict == Verdict::Broken);
    REQUIRE(est.d.size() == 2);
    const double eF = relint(est.F, F), e2 = relint(est.d[1], Field(G, 1.0));
    MESSAGE("F error " << eF << " d_2 error " << e2 << " |d_1| " << l2int(est.d[0]));
    CHECK(eF <= 0.10);
    CHECK(e2 <= 0.10);
    CHECK(l2int(est.d[0]) <= 0.10 * l2int(Field(G, 1.0)));
  }
  {
    side.N = 1;
    DNOracle o("lin", a, rho, SourceModel::make(NonlinearityModel::polynomial(G, {Field(G, 0.0), Field(G, 1.0)}), F));
    RecoveryOptions r1 = ro;
    r1.slice_times.clear();
    const SourceEstimate est = inverse_source(o, a, rho, BoundaryField(G, 0.0), 1, r1, side);
    CHECK(est.verdict == Verdict::Equivalent);
  }
  side.mode = 3;
  DNOracle o("any", a, rho, linear(G, Field(G, 1.0)));
  try {
    inverse_source(o, a, rho, BoundaryField(G, 0.0), 2, ro, side);
    FAIL("expected a capability error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Capability);
  }
  CHECK(o.calls() == 0);
}

TEST_CASE("recovered fields are written with a manifest") {
  auto p = linear_pair(9, 17);
  DNOracle o("q1", p.a, p.rho, linear(p.G, p.q1));
  RecoveryOptions ro;
  ro.basis.m = 3;
  const RecoveredModel r = recover_absolute(o, p.a, p.rho, BoundaryField(p.G, 0.0), ro);
  const auto dir = std::filesystem::temp_directory_path() / "ibvp_recovered_test";
  std::filesystem::remove_all(dir);
  write_recovered(r, dir.string());
  CHECK(std::filesystem::exists(dir / "D1.bin"));
  CHECK(std::filesystem::exists(dir / "u0.bin"));
  CHECK(std::filesystem::exists(dir / "manifest.json"));
  CHECK(r.oracle_calls == o.calls());
  std::filesystem::remove_all(dir);
}
