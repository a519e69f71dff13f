#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ibvp/dn_map.hpp"
#include "ibvp/models.hpp"
#include "ibvp/rays.hpp"

namespace ibvp {

// Black-box DN map of a hidden model. Queries are counted against a budget;
// the same input always yields the same flux.
class DNOracle {
 public:
  DNOracle(std::string name, MatrixCoefficient a, Field rho, NonlinearityModel b, std::size_t budget = 100000,
           SolveOptions opts = default_options());
  // Hidden (d, F): the oracle evaluates the sourced problem.
  DNOracle(std::string name, MatrixCoefficient a, Field rho, SourceModel src, std::size_t budget = 100000,
           SolveOptions opts = default_options());

  static SolveOptions default_options();

  const std::string& name() const;
  const GridPtr& grid() const;
  // Masks every returned record to the observation region.
  void restrict_to(BoundaryRegion region);
  const std::optional<BoundaryRegion>& region() const;

  FluxRecord query(const BoundaryField& f) const;
  std::size_t calls() const;
  std::size_t budget() const;

  // Hidden solution for f0. Validation access for the explicit gauge of the
  // assembly step; the reconstruction pipeline does not call it.
  Field base_state(const BoundaryField& f0) const;

 private:
  struct State;
  std::shared_ptr<State> s_;
};

// Spatial basis for the recovered coefficient fields.
struct BasisSpec {
  enum class Kind { Chebyshev, Lattice };
  Kind kind = Kind::Chebyshev;
  int m = 8;   // per axis: polynomial degree m - 1, or m lattice nodes
};

// GO probes: sources on a circle around the box, one full-angle forward probe per
// source and `beams` angular windows on the adjoint side.
struct ProbeSpec {
  int sources = 12;
  double radius_factor = 1.6;   // source radius over the half diagonal
  int beams = 15;
  double aperture = 0.0;        // beam half width in radians; 0: two beam spacings
  double jitter = 0.0;          // random rotation of the source ring, in units of the source spacing
  std::uint64_t seed = 1;
};

struct RecoveryOptions {
  int K = 1;
  std::vector<double> taus{3.0, 6.0};
  enum class Combine { Joint, Richardson };
  Combine combine = Combine::Joint;
  int gn_iterations = 4;          // Gauss-Newton passes for the first order
  double gn_tol = 1e-6;           // stop when the relative update falls below this
  std::vector<double> slice_times;   // empty: time-independent fields, one window at T/2
  // Time dependence of the fields with S slices: natural cubic splines through the
  // slice times, or Chebyshev polynomials on [0, T] of degree time_degree (< 0: S - 1).
  enum class TimeBasis { Spline, Chebyshev };
  TimeBasis time_basis = TimeBasis::Spline;
  int time_degree = -1;
  int delta_steps = 4;            // time window half width in steps
  ProbeSpec probes;
  BasisSpec basis;
  double lambda = 1e-6;           // gradient Tikhonov weight, relative to the trace ratio
  double oversampling = 3.0;
  double fd_step = 1e-2;          // central-product step, relative to |h|_inf
  int threads = 1;
};

struct OrderDiagnostics {
  int order = 0;
  std::size_t rows = 0;
  std::size_t unknowns = 0;
  double residual = 0.0;        // relative data misfit after the last pass
  double sigma_min = 0.0;       // smallest singular value of the row-normalized, regularized system
  double noise_floor = 0.0;     // L2(Q) spread between the single-tau estimates
  std::vector<double> updates;  // relative update per Gauss-Newton pass
};

struct RecoveredModel {
  std::vector<Field> D;   // D[k-1] ~ d^k b(t, x, u0(t, x)), k = 1..K
  Field u0;               // surrogate center: solution of the zero model with data f0
  std::vector<OrderDiagnostics> diagnostics;
  std::size_t oracle_calls = 0;
  int order() const { return static_cast<int>(D.size()); }
};

// D_k of one oracle by comparison with the zero reference model. When `lower` is
// given, its fields replace the recovered orders 1..lower->size() and only the
// remaining orders are reconstructed.
RecoveredModel recover_absolute(const DNOracle& oracle, const MatrixCoefficient& a, const Field& rho,
                                const BoundaryField& f0, const RecoveryOptions& opts,
                                const std::vector<Field>* lower = nullptr);

struct TaylorRecovery {
  RecoveredModel first, second;
  std::vector<Field> delta;   // D_k(oracle 2) - D_k(oracle 1)
  std::vector<double> noise_floor;
};

// Differences of the Taylor coefficients of two oracles, both measured against
// the common zero reference.
TaylorRecovery recover_taylor(const DNOracle& o1, const DNOracle& o2, const MatrixCoefficient& a, const Field& rho,
                              const BoundaryField& f0, int K, RecoveryOptions opts);
TaylorRecovery recover_taylor(const DNOracle& o1, const DNOracle& o2, const MatrixCoefficient& a, const Field& rho,
                              const BoundaryField& f0, int K, RecoveryOptions opts1, RecoveryOptions opts2);

// Tabulated series about u0 with coefficients D_k / k! and order-0 term
// -(rho dt + A) u0 + F (centered time difference).
NonlinearityModel assemble_representative(const std::vector<Field>& D, const Field& u0, const MatrixCoefficient& a,
                                          const Field& rho, const Field* F = nullptr);
NonlinearityModel assemble_representative(const RecoveredModel& r, const MatrixCoefficient& a, const Field& rho);

// sup |b1 - S_phi b2| over interior nodes and the mu test set, divided by sup |b1| there.
double relative_gauge_distance(const NonlinearityModel& b1, const NonlinearityModel& b2, const Field& phi,
                               const MatrixCoefficient& a, const Field& rho, const MuTestSet& mus = {});

// Gauge breaking ---------------------------------------------------------------

enum class BreakMode { Prescribed, SourceTime, Polynomial, Separated, Spatial, LinearPotential };
BreakMode parse_break_mode(const std::string& s);
const char* to_string(BreakMode m);

enum class Verdict { Broken, Equivalent, HypothesesViolated };
const char* to_string(Verdict v);

// Side data of the breaking hypotheses; the fields used depend on the mode.
struct BreakSideData {
  bool assert_hypotheses = true;   // false: report the gauge relation only
  double tol = 1e-8;               // absolute tolerance of equalities, L2(omega) sense
  double positivity = 1e-8;        // threshold for nonvanishing coefficients
  MuTestSet mus{};
  // Prescribed: b1(kappa) = b2(kappa)
  Field kappa;
  // SourceTime: b1(0) - b2(0) = h(x) G(t,x), u10(theta) = u20(theta)
  std::vector<double> h;
  Field G;
  int theta_level = -1;
  Field u10, u20;
  // Polynomial: degree N and the observation set omega (per spatial node; empty = all)
  int N = 2;
  std::vector<char> omega;
  int K_max = 6;
};

struct GaugeVerdict {
  Verdict verdict = Verdict::Equivalent;
  BreakMode mode = BreakMode::Polynomial;
  Field phi;                             // b1 = S_phi b2
  double phi_l2 = 0.0;                   // L2(Q)
  std::map<std::string, bool> conditions;
  std::map<std::string, std::size_t> failing_nodes;
  double certificate = 0.0;              // relative gauge distance of (b1, b2, phi)
  Field potential_difference;            // LinearPotential: q2 - q1
  std::string detail;
  std::string to_json() const;
};

GaugeVerdict break_gauge(const NonlinearityModel& rep1, const NonlinearityModel& rep2, BreakMode mode,
                         const BreakSideData& side, const MatrixCoefficient& a, const Field& rho);

// Inverse source ---------------------------------------------------------------

struct SourceSplitSide {
  int mode = 2;          // Corollary mode (i)-(iv) as 1..4; only the polynomial mode 2 splits constructively
  int N = 2;             // polynomial degree of d
  // Declared subleading coefficient of d (the first alternative of the dense-set
  // condition); empty means zero.
  Field declared_subleading;
  bool leading_equals_subleading = false;   // second alternative
  double positivity = 1e-8;
  Field kappa;           // mode 1: d(kappa) - F known through the declared field below
  Field kappa_value;     // mode 1: declared d(kappa) - F
};

struct SourceEstimate {
  Verdict verdict = Verdict::Equivalent;
  std::vector<Field> d;   // monomial coefficients d_1..d_N of the estimate (index k-1)
  Field F;
  Field phi;              // gauge removed from the representative
  NonlinearityModel representative;
  RecoveredModel recovered;
  std::string detail;
  std::string to_json() const;
};

SourceEstimate inverse_source(const DNOracle& oracle, const MatrixCoefficient& a, const Field& rho,
                              const BoundaryField& f0, int K, const RecoveryOptions& opts, const SourceSplitSide& side);

// Binary dumps of D_k, u0, plus manifest.json with the diagnostics.
void write_recovered(const RecoveredModel& r, const std::string& dir);

}  // namespace ibvp
