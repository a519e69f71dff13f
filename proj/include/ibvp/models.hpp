#pragma once

#include <string>
#include <vector>

#include "ibvp/grid.hpp"

namespace ibvp {

// Scalar function of mu with derivatives of every order.
struct MuFunction {
  enum class Kind { Series, Sin, Cos, Exp };
  Kind kind = Kind::Series;
  std::vector<double> coeffs;  // Series: sum_j coeffs[j] mu^j

  static MuFunction series(std::vector<double> c);
  static MuFunction sin();
  static MuFunction cos();
  static MuFunction exp();
  double eval(double mu, int k) const;
  std::string name() const;
};

// factor[i] * fn(mu); i is a time level (Separated) or a spatial node
// (SeparatedSpatial).
struct SeparableTerm {
  std::vector<double> factor;
  MuFunction fn;
};

class NonlinearityModel {
 public:
  enum class Variant { Polynomial, Separated, SeparatedSpatial, TabulatedSeries };

  NonlinearityModel() = default;

  static NonlinearityModel zero(GridPtr grid);
  // b = sum_k coeffs[k] mu^k
  static NonlinearityModel polynomial(GridPtr grid, std::vector<Field> coeffs, bool check = true);
  // b = b0 + b1 h(t, b2 mu), h(t, nu) = sum factor[k_t] fn(nu)
  static NonlinearityModel separated(GridPtr grid, Field b0, Field b1, Field b2, std::vector<SeparableTerm> h,
                                     bool check = true);
  // b = b0 + b1 G(x, b2 mu), G(x, nu) = sum factor[s] fn(nu)
  static NonlinearityModel separated_spatial(GridPtr grid, Field b0, Field b1, Field b2,
                                             std::vector<SeparableTerm> G, bool check = true);
  // b = sum_j coeffs[j] (mu - center)^j, j = 0..K
  static NonlinearityModel tabulated(GridPtr grid, Field center, std::vector<Field> coeffs, bool check = true);

  Variant variant() const { return variant_; }
  std::string tag() const;
  const GridPtr& grid() const { return grid_; }
  bool empty() const { return !grid_; }

  // Polynomial degree (-1 for the zero model); stored order K for tabulated.
  int degree() const;
  const std::vector<Field>& coeffs() const { return coeffs_; }
  const Field& center() const { return center_; }
  const Field& b0() const { return b0_; }
  const Field& b1() const { return b1_; }
  const Field& b2() const { return b2_; }
  const std::vector<SeparableTerm>& terms() const { return terms_; }

  double eval(int k, std::size_t s, double mu, int order) const;
  // True when every coefficient field is constant in time.
  bool time_static() const;
  // Largest |b(0,x,0)| over lateral boundary nodes.
  double compatibility_residual() const;

 private:
  void check_compatibility() const;
  GridPtr grid_;
  Variant variant_ = Variant::Polynomial;
  std::vector<Field> coeffs_;
  Field center_, b0_, b1_, b2_;
  std::vector<SeparableTerm> terms_;
};

double evaluate(const NonlinearityModel& b, int k, std::size_t s, double mu, int order);

// Node-wise check of b1 != 0 and b2 != 0 for the separated variants.
struct HypothesisReport {
  bool holds = true;
  std::size_t failing_nodes = 0;
  std::string detail;
};
HypothesisReport check_separated_nonvanishing(const NonlinearityModel& b, double tol = 1e-12);

struct BoundaryDatumReport {
  double initial = 0.0;     // max |f(0,.)|
  double initial_rate = 0.0;  // max |discrete dt f(0,.)|
  double tolerance = 0.0;
  bool admissible = true;
};
BoundaryDatumReport check_boundary_datum(const BoundaryField& f);

// Gauge functions ------------------------------------------------------------

struct GaugeProfile {
  double amplitude = 1.0;
  int time_power = 1;  // t^p; p = 0 violates phi(0) = 0
  Point tilt{0.0, 0.0, 0.0};  // multiplies by (1 + sum tilt_i xi_i)
  // Vanishing order of the factor xi^o0 (1-xi)^o1 per axis and side (1 or 2).
  std::array<std::array<int, 2>, 3> orders{{{2, 2}, {2, 2}, {2, 2}}};
  bool full_data = true;
  // Boundary slots where the conormal constraint is asserted when !full_data.
  std::vector<char> tilde;
};

struct GaugeResiduals {
  double initial = 0.0;
  double dirichlet = 0.0;
  double neumann = 0.0;
  double tolerance = 0.0;
};

struct GaugeFunction {
  Field phi;
  bool full_data = true;
  std::vector<char> tilde;
  GaugeResiduals residuals;
  bool is_zero() const;
};

// Validates the three admissibility constraints with tolerance C h^2 max(1, |phi|).
GaugeFunction make_gauge_from_field(Field phi, const MatrixCoefficient& a, bool full_data = true,
                                    std::vector<char> tilde = {}, double C = 10.0);
GaugeFunction make_gauge(const GridPtr& grid, const GaugeProfile& profile, const MatrixCoefficient& a,
                         double C = 10.0);
GaugeFunction zero_gauge(const GridPtr& grid);

struct SourceModel {
  NonlinearityModel d;
  Field F;
  static SourceModel make(NonlinearityModel d, Field F);
};

// rho dt phi + A phi with a second-order time difference; zero on boundary nodes.
Field gauge_operator(const Field& phi, const MatrixCoefficient& a, const Field& rho);

NonlinearityModel apply_S(const GaugeFunction& phi, const NonlinearityModel& b, const MatrixCoefficient& a,
                          const Field& rho, int K_max = 6);
SourceModel apply_U(const GaugeFunction& phi, const SourceModel& s, const MatrixCoefficient& a, const Field& rho,
                    int K_max = 6);

struct MuTestSet {
  double lo = -2.0;
  double hi = 2.0;
  int points = 17;
  std::vector<double> nodes() const;
};

// sup over interior nodes, all levels and Chebyshev mu nodes of |b1 - S_phi b2|.
double gauge_distance(const NonlinearityModel& b1, const NonlinearityModel& b2, const GaugeFunction& phi,
                      const MatrixCoefficient& a, const Field& rho, const MuTestSet& mus = {});

// b = d - F as a single nonlinearity.
NonlinearityModel source_to_nonlinearity(const SourceModel& s, int K_max = 6);

// Re-expand a tabulated or polynomial model into monomials of mu about 0.
std::vector<Field> monomial_coefficients(const NonlinearityModel& b, int K_max = 6);

// JSON model files with binary field dumps next to them.
void write_model_json(const NonlinearityModel& b, const std::string& dir, const std::string& name);
NonlinearityModel read_model_json(const GridPtr& grid, const std::string& path);

}  // namespace ibvp
