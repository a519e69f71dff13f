#pragma once

#include <limits>
#include <string>
#include <vector>

#include "ibvp/grid.hpp"

namespace ibvp {

// A nonnegative quantity stored as its logarithm (-inf for zero) so that
// exp(-2 tau^2 t) weights never underflow.
struct LogValue {
  double log = -std::numeric_limits<double>::infinity();
  double value() const;
  bool zero() const { return log == -std::numeric_limits<double>::infinity(); }
};

// Raw weighted integrals of the Carleman inequality for one tau; the weight is
// exp(-2 (tau^2 t + tau psi)) with psi = |x - x0|.
//   boundary_plus  = int_{Gamma+} w |d_nu v|^2 |d_nu psi|
//   volume         = int_Q w |v|^2
//   residual       = int_Q w |(d_t - Laplace + q) v|^2
//   boundary_minus = int_{Gamma-} w |d_nu v|^2 |d_nu psi|
struct CarlemanSides {
  double tau = 0.0;
  LogValue boundary_plus, volume, residual, boundary_minus;

  // tau * boundary_plus + tau^2 * volume
  LogValue lhs() const;
  // residual + tau * boundary_minus
  LogValue rhs() const;
  // lhs / rhs; +inf when rhs vanishes and lhs does not.
  double ratio() const;
};

struct CarlemanOptions {
  bool log_space = true;      // false: plain double sums (underflows for large tau^2 T)
  double trace_tol = 1e-10;   // relative tolerance for v = 0 on the lateral boundary and at t = 0
};

// Requires n = 3, x0 outside the closed box and the traces v|_Sigma = 0, v(0) = 0.
// Derivatives come from stencils on the grid (second order, exact on quadratics);
// the integrals square a piecewise quartic interpolant of the nodal data at fixed
// Gauss points, so every integral is nonnegative and nonincreasing in tau.
CarlemanSides carleman_sides(const GridPtr& g, const Point& x0, const Field& q, const Field& v, double tau,
                             const CarlemanOptions& opts = {});

// Sign of (x - x0).nu on each face of the box: +1 Gamma+, -1 Gamma-, 0 tangent.
// Order: (axis 0, low), (axis 0, high), (axis 1, low), ...
std::vector<int> face_signs(const SpaceTimeGrid& g, const Point& x0);

// Closed-form test functions satisfying the trace conditions on the box:
//   "poly"      t prod x_i (1 - x_i)
//   "poly_t2"   t^2 prod x_i (1 - x_i)
//   "bump"      t prod (x_i (1 - x_i))^2
//   "tilted"    t (1 + x_0 + 2 x_1) prod x_i (1 - x_i)
//   "sine"      t (1 + t) prod sin(pi x_i)
//   "interior"  t b(x_0) x_1 (1 - x_1) x_2 (1 - x_2), b in C^3 supported in (0.25, 0.75)
// Coordinates are mapped to the unit box first.
Field carleman_test_function(const GridPtr& g, const std::string& recipe);
const std::vector<std::string>& carleman_recipes();

struct CarlemanRow {
  std::string member;
  CarlemanSides sides;
};

struct CarlemanReport {
  std::vector<double> taus;
  std::vector<std::string> members;
  std::vector<CarlemanRow> rows;   // member-major
  // First sweep tau after which every member's ratio is nonincreasing.
  double tau_emp = 0.0;
  // Max ratio over the family for tau >= tau_emp. Relative to this family only.
  double C_emp = 0.0;
  // False when some ratio is still increasing at the largest tau.
  bool plateau_reached = false;
  std::vector<double> growing_taus;   // taus at which some ratio increased

  const CarlemanRow& row(std::size_t member, std::size_t tau_index) const;
};

struct CarlemanFamilyMember {
  std::string name;
  Field v;
};

CarlemanReport carleman_sweep(const GridPtr& g, const Point& x0, const Field& q,
                              const std::vector<CarlemanFamilyMember>& family, const std::vector<double>& taus,
                              int threads = 1, const CarlemanOptions& opts = {});

// "member,tau,log10_boundary_plus,log10_volume,log10_residual,log10_boundary_minus,log10_lhs,log10_rhs,ratio"
// rows followed by "# tau_emp" and "# C_emp" lines. C_emp is relative to the listed family.
void write_carleman_csv(const CarlemanReport& r, const std::string& path);

}  // namespace ibvp
