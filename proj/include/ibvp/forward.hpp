#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ibvp/grid.hpp"
#include "ibvp/models.hpp"

namespace ibvp {

// First-order term beta . grad v, static in time.
struct Drift {
  std::vector<Point> beta;  // per spatial node
  bool upwind = false;
};

struct SolveOptions {
  double theta = 0.5;
  double newton_tol = 1e-10;  // relative to the magnitude of the step's terms
  int max_newton = 25;
  int max_halvings = 8;
  bool theta_fallback = true;  // retry a failed step with theta = 1
  std::vector<double> homotopy{0.25, 0.5, 0.75};
  double blowup = 1e12;
};

struct SolveReport {
  Field u;
  std::vector<int> newton_iterations;  // per step k = 1..nt-1
  std::vector<double> residuals;       // final relative residual per step
  bool converged = false;
  std::vector<double> continuation;    // boundary-data scalings attempted, in order
  std::vector<int> theta_fallback_steps;
  int failed_step = -1;
  std::string message;
  int total_newton() const;
};

// rho dt u + A u + b(t,x,u) = F, u = f on the lateral boundary, u(0) = 0.
SolveReport solve_ibvp(const MatrixCoefficient& a, const Field& rho, const NonlinearityModel& b,
                       const BoundaryField& f, const SolveOptions& opts = {}, const Field* F = nullptr,
                       const Field* guess = nullptr);
SolveReport solve_ibvp(const MatrixCoefficient& a, const Field& rho, const SourceModel& src, const BoundaryField& f,
                       const SolveOptions& opts = {});

// Spatial operator of one level including an optional drift.
SpatialOperator level_operator(const SpaceTimeGrid& g, const MatrixCoefficient& a, int k, const Drift* drift);

// Reusable linear theta-scheme for rho dt v + A v + beta.grad v + q v = F.
// Factorizations are cached; not safe for concurrent use.
class LinearPropagator {
 public:
  LinearPropagator(const MatrixCoefficient& a, const Field& rho, const Field& q, double theta = 0.5,
                   std::shared_ptr<const Drift> drift = nullptr);
  ~LinearPropagator();
  LinearPropagator(LinearPropagator&&) noexcept;
  LinearPropagator& operator=(LinearPropagator&&) noexcept;

  const GridPtr& grid() const;
  double theta() const;
  // v(0) = 0, v = g on the lateral boundary (either pointer may be null).
  Field forward(const Field* F, const BoundaryField* g) const;
  // -dt(rho w) + A w + q w = F backward from w(T) = 0 (drift sign flipped by the caller).
  Field adjoint(const Field* F, const BoundaryField* g) const;
  // Exact discrete transpose of V -> sum_k wt_k sum_b ws_b gw_k,b (flux V)_k,b for
  // forward solutions with zero boundary data: returns W with
  // that functional = integrate_Q(W * G) for every source G.
  Field flux_adjoint(const BoundaryField& gw) const;
  // Conormal flux of a forward solution.
  BoundaryField flux(const Field& v) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

Field solve_linear(const MatrixCoefficient& a, const Field& rho, const Field& q, const Field* F,
                   const BoundaryField* f, bool adjoint, double theta = 0.5, const Drift* drift = nullptr);

struct BallRow {
  double radius = 0.0;
  bool converged = false;
  double ratio = 0.0;  // |u_f - u_0|_inf / |f - f_0|_inf
  int newton_total = 0;
};

struct BallReport {
  std::vector<BallRow> rows;
  double largest_converged = 0.0;
  double smallest_failed = 0.0;  // 0 when every radius converged
  double plateau = 0.0;          // ratio at the smallest converged radius
};

BallReport probe_wellposed_ball(const MatrixCoefficient& a, const Field& rho, const NonlinearityModel& b,
                                const BoundaryField& f0, const BoundaryField& h, const std::vector<double>& radii,
                                const SolveOptions& opts = {});

}  // namespace ibvp
