#include "ibvp/forward.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <optional>

#include "ibvp/error.hpp"

namespace ibvp {

namespace {
constexpr const char* kMod = "forward_solver";
using Vec = Eigen::VectorXd;

Vec gather_interior(const SpaceTimeGrid& g, const double* level) {
  Vec v(g.interior_size());
  for (std::size_t r = 0; r < g.interior_size(); ++r) v[r] = level[g.interior_nodes()[r]];
  return v;
}
Vec gather_boundary(const SpaceTimeGrid& g, const double* level) {
  Vec v(g.boundary_size());
  for (std::size_t b = 0; b < g.boundary_size(); ++b) v[b] = level[g.boundary_nodes()[b]];
  return v;
}
Vec boundary_level(const BoundaryField* f, const SpaceTimeGrid& g, int k, double scale = 1.0) {
  Vec v = Vec::Zero(g.boundary_size());
  if (f)
    for (std::size_t b = 0; b < g.boundary_size(); ++b) v[b] = scale * f->at(k, b);
  return v;
}
void scatter(const SpaceTimeGrid& g, double* level, const Vec& vi, const Vec& vb) {
  for (std::size_t r = 0; r < g.interior_size(); ++r) level[g.interior_nodes()[r]] = vi[r];
  for (std::size_t b = 0; b < g.boundary_size(); ++b) level[g.boundary_nodes()[b]] = vb[b];
}
bool field_static(const Field& f) {
  const auto& g = *f.grid();
  for (int k = 1; k < g.nt(); ++k)
    if (!std::equal(f.level(k), f.level(k) + g.spatial_size(), f.level(0))) return false;
  return true;
}
double inf_norm(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

std::vector<long> diagonal_positions(const SparseMat& m) {
  std::vector<long> pos(m.cols(), -1);
  for (long j = 0; j < m.outerSize(); ++j)
    for (SparseMat::InnerIterator it(m, j); it; ++it)
      if (it.row() == j) pos[j] = &it.valueRef() - m.valuePtr();
  return pos;
}

// Adds a diagonal to a matrix whose diagonal pattern may be incomplete.
SparseMat with_diagonal(const SparseMat& m, const Vec& d) {
  SparseMat id(m.rows(), m.cols());
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(d.size());
  for (long i = 0; i < d.size(); ++i) t.emplace_back(i, i, d[i]);
  id.setFromTriplets(t.begin(), t.end());
  SparseMat out = m + id;
  out.makeCompressed();
  return out;
}

class StepSolver {
 public:
  StepSolver(const SparseMat& A, bool symmetric) : sym_(symmetric) {
    if (sym_) {
      ldlt_.compute(A);
      require(ldlt_.info() == Eigen::Success, kMod, ErrorKind::Numeric, "singular step matrix");
    } else {
      lu_.analyzePattern(A);
      lu_.factorize(A);
      require(lu_.info() == Eigen::Success, kMod, ErrorKind::Numeric, "singular step matrix");
      At_ = A.transpose();
    }
  }
  Vec solve(const Vec& b) const { return sym_ ? Vec(ldlt_.solve(b)) : Vec(lu_.solve(b)); }
  Vec solve_transpose(const Vec& b) {
    if (sym_) return ldlt_.solve(b);
    if (!lut_) {
      lut_ = std::make_unique<Eigen::SparseLU<SparseMat>>();
      lut_->analyzePattern(At_);
      lut_->factorize(At_);
      require(lut_->info() == Eigen::Success, kMod, ErrorKind::Numeric, "singular transposed step matrix");
    }
    return lut_->solve(b);
  }

 private:
  bool sym_;
  Eigen::SimplicialLDLT<SparseMat> ldlt_;
  mutable Eigen::SparseLU<SparseMat> lu_;
  SparseMat At_;
  std::unique_ptr<Eigen::SparseLU<SparseMat>> lut_;
};
}  // namespace

int SolveReport::total_newton() const {
  int s = 0;
  for (int n : newton_iterations) s += n;
  return s;
}

SpatialOperator level_operator(const SpaceTimeGrid& g, const MatrixCoefficient& a, int k, const Drift* drift) {
  SpatialOperator op = stiffness(g, a, k);
  if (!drift) return op;
  require(drift->beta.size() == g.spatial_size(), kMod, ErrorKind::Input, "drift needs one vector per node");
  std::vector<Eigen::Triplet<double>> ti, tb;
  auto add = [&](std::size_t row, std::size_t col, double v) {
    long is = g.interior_slot(col);
    if (is >= 0)
      ti.emplace_back(row, is, v);
    else
      tb.emplace_back(row, g.boundary_slot(col), v);
  };
  for (std::size_t r = 0; r < g.interior_size(); ++r) {
    const std::size_t s = g.interior_nodes()[r];
    for (int i = 0; i < g.dim(); ++i) {
      const double bi = drift->beta[s][i];
      if (bi == 0.0) continue;
      const double h = g.h(i);
      const std::size_t st = g.stride(i);
      if (!drift->upwind) {
        add(r, s + st, bi / (2 * h));
        add(r, s - st, -bi / (2 * h));
      } else if (bi > 0) {
        add(r, s, bi / h);
        add(r, s - st, -bi / h);
      } else {
        add(r, s + st, bi / h);
        add(r, s, -bi / h);
      }
    }
  }
  SparseMat dII(g.interior_size(), g.interior_size()), dIB(g.interior_size(), g.boundary_size());
  dII.setFromTriplets(ti.begin(), ti.end());
  dIB.setFromTriplets(tb.begin(), tb.end());
  op.II = op.II + dII;
  op.IB = op.IB + dIB;
  op.II.makeCompressed();
  return op;
}

// ------------------------------------------------------------ nonlinear solve

namespace {

struct StepOutcome {
  bool ok = false;
  int iterations = 0;
  double residual = 0.0;
};

class NonlinearStepper {
 public:
  NonlinearStepper(const MatrixCoefficient& a, const Field& rho, const NonlinearityModel& b, const Field* F,
                   const SolveOptions& o)
      : g_(*a.grid()), a_(a), rho_(rho), b_(b), F_(F), opts_(o) {}

  const SpatialOperator& op(int k) {
    if (a_.time_static()) {
      if (!cache_) cache_ = stiffness(g_, a_, 0);
      return *cache_;
    }
    if (cached_level_ != k) {
      level_cache_ = stiffness(g_, a_, k);
      cached_level_ = k;
    }
    return level_cache_;
  }

  // Advances from level k-1 (already in u) to level k with boundary values gk.
  StepOutcome step(Field& u, int k, const Vec& gk, double theta, const Field* guess) {
    const std::size_t ni = g_.interior_size();
    const double dt = g_.dt();
    Vec prevI = gather_interior(g_, u.level(k - 1));
    Vec prevB = gather_boundary(g_, u.level(k - 1));
    Vec rmid(ni), bprev(ni), Fk = Vec::Zero(ni), Fkm = Vec::Zero(ni);
    for (std::size_t r = 0; r < ni; ++r) {
      const std::size_t s = g_.interior_nodes()[r];
      rmid[r] = (theta * rho_.at(k, s) + (1 - theta) * rho_.at(k - 1, s)) / dt;
      bprev[r] = b_.eval(k - 1, s, prevI[r], 0);
      if (F_) {
        Fk[r] = F_->at(k, s);
        Fkm[r] = F_->at(k - 1, s);
      }
    }
    Vec known;
    {
      const SpatialOperator& om = op(k - 1);
      known = rmid.cwiseProduct(prevI) - (1 - theta) * (om.II * prevI + om.IB * prevB + bprev - Fkm);
    }
    const SpatialOperator& ok = op(k);
    known -= theta * (ok.IB * gk - Fk);

    Vec x = guess ? gather_interior(g_, guess->level(k)) : prevI;
    Vec bval(ni), bder(ni);
    auto residual = [&](const Vec& y, double* scale) {
      for (std::size_t r = 0; r < ni; ++r) bval[r] = b_.eval(k, g_.interior_nodes()[r], y[r], 0);
      Vec Ay = ok.II * y;
      Vec G = rmid.cwiseProduct(y) + theta * (Ay + bval) - known;
      if (scale)
        *scale = std::max({inf_norm(rmid.cwiseProduct(y)), inf_norm(known), theta * inf_norm(Ay),
                           theta * inf_norm(bval)});
      return G;
    };

    if (pattern_ni_ != ni || !a_.time_static()) {
      J_ = theta * ok.II;
      J_.makeCompressed();
      diag_ = diagonal_positions(J_);
      ldlt_.analyzePattern(J_);
      pattern_ni_ = ni;
      pattern_theta_ = theta;
    }
    if (pattern_theta_ != theta) {
      J_ = theta * ok.II;
      J_.makeCompressed();
      pattern_theta_ = theta;
    }
    SparseMat base = J_;

    StepOutcome out;
    double scale = 0.0;
    Vec G = residual(x, &scale);
    double gn = inf_norm(G);
    for (int it = 0; it <= opts_.max_newton; ++it) {
      out.residual = scale > 0 ? gn / scale : gn;
      if (gn <= opts_.newton_tol * scale) {
        out.ok = true;
        out.iterations = it;
        break;
      }
      if (it == opts_.max_newton) break;
      for (std::size_t r = 0; r < ni; ++r) bder[r] = b_.eval(k, g_.interior_nodes()[r], x[r], 1);
      SparseMat J = base;
      for (std::size_t r = 0; r < ni; ++r) J.valuePtr()[diag_[r]] += rmid[r] + theta * bder[r];
      ldlt_.factorize(J);
      require(ldlt_.info() == Eigen::Success, kMod, ErrorKind::Numeric, "singular Jacobian");
      Vec delta = -ldlt_.solve(G);
      double alpha = 1.0;
      bool accepted = false;
      for (int hv = 0; hv <= opts_.max_halvings; ++hv) {
        Vec xt = x + alpha * delta;
        double st = 0.0;
        Vec Gt = residual(xt, &st);
        double gt = inf_norm(Gt);
        if (std::isfinite(gt) && (gt < gn || gt <= opts_.newton_tol * st)) {
          x = xt;
          G = Gt;
          gn = gt;
          scale = st;
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted || inf_norm(x) > opts_.blowup) {
        out.iterations = it + 1;
        break;
      }
    }
    for (std::size_t r = 0; r < ni; ++r) u.at(k, g_.interior_nodes()[r]) = x[r];
    return out;
  }

 private:
  const SpaceTimeGrid& g_;
  const MatrixCoefficient& a_;
  const Field& rho_;
  const NonlinearityModel& b_;
  const Field* F_;
  SolveOptions opts_;
  std::optional<SpatialOperator> cache_;
  SpatialOperator level_cache_;
  int cached_level_ = -1;
  SparseMat J_;
  std::vector<long> diag_;
  Eigen::SimplicialLDLT<SparseMat> ldlt_;
  std::size_t pattern_ni_ = 0;
  double pattern_theta_ = -1.0;
};

struct Attempt {
  Field u;
  std::vector<int> iters;
  std::vector<double> res;
  std::vector<int> fallback;
  bool ok = true;
  int failed_step = -1;
};

Attempt run_attempt(NonlinearStepper& stepper, const SpaceTimeGrid& g, const GridPtr& grid, const BoundaryField& f,
                    double lambda, const SolveOptions& opts, const Field* guess) {
  Attempt at;
  at.u = Field(grid, 0.0);
  for (int k = 1; k < g.nt(); ++k)
    for (std::size_t b = 0; b < g.boundary_size(); ++b) at.u.at(k, g.boundary_nodes()[b]) = lambda * f.at(k, b);
  for (int k = 1; k < g.nt(); ++k) {
    Vec gk = boundary_level(&f, g, k, lambda);
    Field backup_level;
    StepOutcome so = stepper.step(at.u, k, gk, opts.theta, guess);
    if (!so.ok && opts.theta_fallback && opts.theta != 1.0) {
      so = stepper.step(at.u, k, gk, 1.0, guess);
      if (so.ok) at.fallback.push_back(k);
    }
    at.iters.push_back(so.iterations);
    at.res.push_back(so.residual);
    if (!so.ok) {
      at.ok = false;
      at.failed_step = k;
      return at;
    }
  }
  return at;
}
}  // namespace

SolveReport solve_ibvp(const MatrixCoefficient& a, const Field& rho, const NonlinearityModel& b,
                       const BoundaryField& f, const SolveOptions& opts, const Field* F, const Field* guess) {
  const GridPtr& grid = a.grid();
  require_same_grid(grid, rho.grid(), "solve_ibvp");
  require_same_grid(grid, b.grid(), "solve_ibvp");
  require_same_grid(grid, f.grid(), "solve_ibvp");
  if (F) require_same_grid(grid, F->grid(), "solve_ibvp");
  if (guess) require_same_grid(grid, guess->grid(), "solve_ibvp");
  require(opts.theta > 0.0 && opts.theta <= 1.0, kMod, ErrorKind::Config, "theta must lie in (0,1]");
  const auto& g = *grid;
  const auto datum = check_boundary_datum(f);
  require(datum.initial <= 1e-12 * std::max(1.0, sup_norm(f)), kMod, ErrorKind::Input,
          "boundary datum must vanish at t = 0");

  NonlinearStepper stepper(a, rho, b, F, opts);
  SolveReport rep;
  rep.continuation.push_back(1.0);
  Attempt at = run_attempt(stepper, g, grid, f, 1.0, opts, guess);
  if (!at.ok && !opts.homotopy.empty()) {
    // continuation in the boundary datum, each level seeded by the previous one
    Field seed;
    bool chain_ok = true;
    std::vector<double> levels = opts.homotopy;
    levels.push_back(1.0);
    for (double lam : levels) {
      rep.continuation.push_back(lam);
      Attempt next = run_attempt(stepper, g, grid, f, lam, opts, seed.empty() ? guess : &seed);
      if (!next.ok) {
        chain_ok = false;
        if (lam == 1.0 || seed.empty()) at = std::move(next);
        break;
      }
      seed = next.u;
      if (lam == 1.0) at = std::move(next);
    }
    if (!chain_ok) at.ok = false;
  }
  rep.u = std::move(at.u);
  rep.newton_iterations = std::move(at.iters);
  rep.residuals = std::move(at.res);
  rep.theta_fallback_steps = std::move(at.fallback);
  rep.converged = at.ok;
  rep.failed_step = at.failed_step;
  rep.message = at.ok ? "converged" : "Newton failed at step " + std::to_string(at.failed_step);
  return rep;
}

SolveReport solve_ibvp(const MatrixCoefficient& a, const Field& rho, const SourceModel& src, const BoundaryField& f,
                       const SolveOptions& opts) {
  return solve_ibvp(a, rho, src.d, f, opts, &src.F);
}

// --------------------------------------------------------- linear propagator

struct LinearPropagator::Impl {
  const SpaceTimeGrid* g = nullptr;
  GridPtr grid;
  MatrixCoefficient a;
  Field rho, q;
  double theta = 0.5;
  std::shared_ptr<const Drift> drift;
  bool is_static = false;
  bool symmetric = true;
  std::vector<SpatialOperator> ops;                 // one per level, or one if static
  std::vector<std::unique_ptr<StepSolver>> fwd;     // forward step matrices
  std::vector<std::unique_ptr<StepSolver>> adj;     // adjoint step matrices
  std::vector<SparseMat> flux_mats;

  const SpatialOperator& op(int k) const { return is_static ? ops[0] : ops[k]; }
  Vec qlevel(int k) const { return gather_interior(*g, q.level(k)); }
  Vec rho_mid(int k) const {
    Vec r(g->interior_size());
    for (std::size_t i = 0; i < g->interior_size(); ++i) {
      const std::size_t s = g->interior_nodes()[i];
      r[i] = (theta * rho.at(k, s) + (1 - theta) * rho.at(k - 1, s)) / g->dt();
    }
    return r;
  }
  Vec rho_at(int k) const {
    Vec r(g->interior_size());
    for (std::size_t i = 0; i < g->interior_size(); ++i) r[i] = rho.at(k, g->interior_nodes()[i]) / g->dt();
    return r;
  }
  // (II + diag q) v
  Vec apply_A(int k, const Vec& v) const { return op(k).II * v + qlevel(k).cwiseProduct(v); }
  Vec apply_AT(int k, const Vec& v) const {
    return op(k).II.transpose() * v + qlevel(k).cwiseProduct(v);
  }
  StepSolver& forward_solver(int k) {
    const int slot = is_static ? 0 : k;
    if (!fwd[slot]) {
      SparseMat m = with_diagonal(theta * op(k).II, rho_mid(k) + theta * qlevel(k));
      fwd[slot] = std::make_unique<StepSolver>(m, symmetric);
    }
    return *fwd[slot];
  }
  StepSolver& adjoint_solver(int k) {
    const int slot = is_static ? 0 : k;
    if (!adj[slot]) {
      SparseMat m = with_diagonal(theta * op(k).II, rho_at(k) + theta * qlevel(k));
      adj[slot] = std::make_unique<StepSolver>(m, symmetric);
    }
    return *adj[slot];
  }
  const SparseMat& flux_mat(int k) {
    const int slot = a.time_static() ? 0 : k;
    if (flux_mats[slot].rows() == 0) flux_mats[slot] = conormal_matrix(*g, a, k);
    return flux_mats[slot];
  }
};

LinearPropagator::LinearPropagator(const MatrixCoefficient& a, const Field& rho, const Field& q, double theta,
                                   std::shared_ptr<const Drift> drift)
    : impl_(std::make_unique<Impl>()) {
  require_same_grid(a.grid(), rho.grid(), "LinearPropagator");
  require_same_grid(a.grid(), q.grid(), "LinearPropagator");
  require(theta > 0.0 && theta <= 1.0, kMod, ErrorKind::Config, "theta must lie in (0,1]");
  auto& m = *impl_;
  m.grid = a.grid();
  m.g = m.grid.get();
  m.a = a;
  m.rho = rho;
  m.q = q;
  m.theta = theta;
  m.drift = std::move(drift);
  m.symmetric = !m.drift;
  m.is_static = a.time_static() && field_static(rho) && field_static(q);
  const int nt = m.g->nt();
  if (a.time_static()) {
    SpatialOperator op0 = level_operator(*m.g, a, 0, m.drift.get());
    m.ops.assign(m.is_static ? 1 : nt, op0);
  } else {
    for (int k = 0; k < nt; ++k) m.ops.push_back(level_operator(*m.g, a, k, m.drift.get()));
  }
  m.fwd.resize(m.is_static ? 1 : nt);
  m.adj.resize(m.is_static ? 1 : nt);
  m.flux_mats.resize(a.time_static() ? 1 : nt);
}

LinearPropagator::~LinearPropagator() = default;
LinearPropagator::LinearPropagator(LinearPropagator&&) noexcept = default;
LinearPropagator& LinearPropagator::operator=(LinearPropagator&&) noexcept = default;

const GridPtr& LinearPropagator::grid() const { return impl_->grid; }
double LinearPropagator::theta() const { return impl_->theta; }

Field LinearPropagator::forward(const Field* F, const BoundaryField* gdat) const {
  auto& m = *impl_;
  const auto& g = *m.g;
  if (F) require_same_grid(m.grid, F->grid(), "LinearPropagator::forward");
  if (gdat) require_same_grid(m.grid, gdat->grid(), "LinearPropagator::forward");
  const double th = m.theta;
  Field v(m.grid, 0.0);
  Vec prevI = Vec::Zero(g.interior_size()), prevB = Vec::Zero(g.boundary_size());
  Vec Fprev = F ? gather_interior(g, F->level(0)) : Vec::Zero(g.interior_size());
  for (int k = 1; k < g.nt(); ++k) {
    Vec gk = boundary_level(gdat, g, k);
    Vec Fk = F ? gather_interior(g, F->level(k)) : Vec::Zero(g.interior_size());
    Vec rhs = m.rho_mid(k).cwiseProduct(prevI) -
              (1 - th) * (m.apply_A(k - 1, prevI) + m.op(k - 1).IB * prevB - Fprev) - th * (m.op(k).IB * gk - Fk);
    Vec x = m.forward_solver(k).solve(rhs);
    scatter(g, v.level(k), x, gk);
    prevI = std::move(x);
    prevB = std::move(gk);
    Fprev = std::move(Fk);
  }
  return v;
}

Field LinearPropagator::adjoint(const Field* F, const BoundaryField* gdat) const {
  auto& m = *impl_;
  const auto& g = *m.g;
  if (F) require_same_grid(m.grid, F->grid(), "LinearPropagator::adjoint");
  if (gdat) require_same_grid(m.grid, gdat->grid(), "LinearPropagator::adjoint");
  const double th = m.theta;
  const int nt = g.nt();
  Field w(m.grid, 0.0);
  Vec nextI = Vec::Zero(g.interior_size());
  Vec nextB = boundary_level(gdat, g, nt - 1);
  scatter(g, w.level(nt - 1), nextI, nextB);
  Vec Fnext = F ? gather_interior(g, F->level(nt - 1)) : Vec::Zero(g.interior_size());
  for (int k = nt - 2; k >= 0; --k) {
    Vec gk = boundary_level(gdat, g, k);
    Vec Fk = F ? gather_interior(g, F->level(k)) : Vec::Zero(g.interior_size());
    Vec rhs = m.rho_at(k + 1).cwiseProduct(nextI) -
              (1 - th) * (m.apply_A(k + 1, nextI) + m.op(k + 1).IB * nextB - Fnext) - th * (m.op(k).IB * gk - Fk);
    Vec x = m.adjoint_solver(k).solve(rhs);
    scatter(g, w.level(k), x, gk);
    nextI = std::move(x);
    nextB = std::move(gk);
    Fnext = std::move(Fk);
  }
  return w;
}

Field LinearPropagator::flux_adjoint(const BoundaryField& gw) const {
  auto& m = *impl_;
  const auto& g = *m.g;
  require_same_grid(m.grid, gw.grid(), "LinearPropagator::flux_adjoint");
  const int nt = g.nt();
  const double th = m.theta;
  const auto& wt = g.time_weights();
  const auto& ws = g.sigma_weights();
  std::vector<Vec> lam(nt + 1, Vec::Zero(g.interior_size()));
  auto z_at = [&](int k) {
    Vec wb(g.boundary_size());
    for (std::size_t b = 0; b < g.boundary_size(); ++b) wb[b] = ws[b] * gw.at(k, b);
    Vec full = m.flux_mat(k).transpose() * wb;
    return Vec(wt[k] * gather_interior(g, full.data()));
  };
  for (int k = nt - 1; k >= 1; --k) {
    Vec rhs = z_at(k);
    if (k + 1 <= nt - 1) {
      // S_{k+1}^T lam^{k+1} with S_{k+1} = -M_{k+1}/dt + (1-theta) A_k
      rhs -= -m.rho_mid(k + 1).cwiseProduct(lam[k + 1]) + (1 - th) * m.apply_AT(k, lam[k + 1]);
    }
    lam[k] = m.forward_solver(k).solve_transpose(rhs);
  }
  Field W(m.grid, 0.0);
  for (int j = 0; j < nt; ++j) {
    for (std::size_t r = 0; r < g.interior_size(); ++r) {
      const std::size_t s = g.interior_nodes()[r];
      const double v = th * lam[j][r] + (1 - th) * lam[j + 1][r];
      W.at(j, s) = v / (wt[j] * g.omega_weights()[s]);
    }
  }
  return W;
}

BoundaryField LinearPropagator::flux(const Field& v) const { return conormal_derivative(v, impl_->a); }

Field solve_linear(const MatrixCoefficient& a, const Field& rho, const Field& q, const Field* F,
                   const BoundaryField* f, bool adjoint, double theta, const Drift* drift) {
  std::shared_ptr<const Drift> d;
  if (drift) d = std::make_shared<Drift>(*drift);
  LinearPropagator p(a, rho, q, theta, d);
  return adjoint ? p.adjoint(F, f) : p.forward(F, f);
}

// ---------------------------------------------------------------- ball probe

BallReport probe_wellposed_ball(const MatrixCoefficient& a, const Field& rho, const NonlinearityModel& b,
                                const BoundaryField& f0, const BoundaryField& h, const std::vector<double>& radii,
                                const SolveOptions& opts) {
  SolveReport base = solve_ibvp(a, rho, b, f0, opts);
  require(base.converged, kMod, ErrorKind::Solver, "base solve at f0 did not converge");
  BallReport rep;
  std::vector<double> sorted = radii;
  std::sort(sorted.begin(), sorted.end());
  const double hn = sup_norm(h);
  require(hn > 0.0, kMod, ErrorKind::Input, "probe direction is zero");
  for (double r : sorted) {
    BoundaryField f = f0 + r * h;
    SolveReport s = solve_ibvp(a, rho, b, f, opts);
    BallRow row;
    row.radius = r;
    row.converged = s.converged;
    row.newton_total = s.total_newton();
    if (s.converged) {
      row.ratio = sup_norm(s.u - base.u) / (std::abs(r) * hn);
      rep.largest_converged = std::max(rep.largest_converged, r);
      if (rep.plateau == 0.0) rep.plateau = row.ratio;
    } else if (rep.smallest_failed == 0.0) {
      rep.smallest_failed = r;
    }
    rep.rows.push_back(row);
  }
  return rep;
}

}  // namespace ibvp
