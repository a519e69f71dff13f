#include "ibvp/grid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>

#include "ibvp/error.hpp"

namespace ibvp {

namespace {
constexpr const char* kMod = "grid_core";
constexpr std::int64_t kMagic = 0x49425650;  // "IBVP"
constexpr std::int64_t kVersion = 1;

std::vector<double> trapezoid(int n, double h) {
  std::vector<double> w(n, h);
  if (n == 1) {
    w[0] = 1.0;
    return w;
  }
  w.front() *= 0.5;
  w.back() *= 0.5;
  return w;
}
}  // namespace

GridSpec GridSpec::unit(int n, int nodes_per_axis, int nt, double T) {
  GridSpec s;
  s.n = n;
  s.nodes = {nodes_per_axis, n > 1 ? nodes_per_axis : 1, n > 2 ? nodes_per_axis : 1};
  s.T = T;
  s.nt = nt;
  return s;
}

bool GridSpec::operator==(const GridSpec& o) const {
  if (n != o.n || nt != o.nt || T != o.T) return false;
  for (int i = 0; i < n; ++i)
    if (lo[i] != o.lo[i] || hi[i] != o.hi[i] || nodes[i] != o.nodes[i]) return false;
  return true;
}

SpaceTimeGrid::SpaceTimeGrid(const GridSpec& spec) : spec_(spec) {
  require(spec.n >= 1 && spec.n <= 3, kMod, ErrorKind::Config, "dimension must be 1, 2 or 3");
  require(spec.nt >= 2, kMod, ErrorKind::Config, "nt must be >= 2");
  require(spec.T > 0.0 && std::isfinite(spec.T), kMod, ErrorKind::Config, "T must be positive");
  for (int i = 0; i < 3; ++i) {
    if (i >= spec.n) {
      spec_.nodes[i] = 1;
      spec_.lo[i] = 0.0;
      spec_.hi[i] = 0.0;
      continue;
    }
    require(spec.nodes[i] >= 2, kMod, ErrorKind::Config, "per-axis node count must be >= 2");
    require(spec.hi[i] > spec.lo[i], kMod, ErrorKind::Config, "extent must be positive");
    h_[i] = (spec.hi[i] - spec.lo[i]) / (spec.nodes[i] - 1);
  }
  dt_ = spec.T / (spec.nt - 1);
  stride_ = {1, static_cast<std::size_t>(spec_.nodes[0]),
             static_cast<std::size_t>(spec_.nodes[0]) * spec_.nodes[1]};
  ns_ = stride_[2] * spec_.nodes[2];

  slot_.assign(ns_, 0);
  std::array<std::vector<double>, 3> w1;
  for (int i = 0; i < 3; ++i) w1[i] = trapezoid(spec_.nodes[i], i < spec_.n ? h_[i] : 1.0);
  w_omega_.resize(ns_);
  for (std::size_t s = 0; s < ns_; ++s) {
    auto idx = multi(s);
    w_omega_[s] = w1[0][idx[0]] * w1[1][idx[1]] * w1[2][idx[2]];
    bool bnd = false;
    Point nu{0.0, 0.0, 0.0};
    double ws = 0.0;
    for (int ax = 0; ax < spec_.n; ++ax) {
      int side = idx[ax] == 0 ? -1 : (idx[ax] == spec_.nodes[ax] - 1 ? 1 : 0);
      if (side == 0) continue;
      bnd = true;
      nu[ax] = side;
      // face weight: product of trapezoid weights along the tangential axes
      double fw = 1.0;
      for (int b = 0; b < spec_.n; ++b)
        if (b != ax) fw *= w1[b][idx[b]];
      ws += fw;
    }
    if (bnd) {
      double len = std::sqrt(nu[0] * nu[0] + nu[1] * nu[1] + nu[2] * nu[2]);
      for (auto& c : nu) c /= len;
      slot_[s] = -static_cast<long>(boundary_.size()) - 1;
      boundary_.push_back(s);
      normals_.push_back(nu);
      w_sigma_.push_back(ws);
    } else {
      slot_[s] = static_cast<long>(interior_.size());
      interior_.push_back(s);
    }
  }
  w_time_ = trapezoid(spec_.nt, dt_);
}

double SpaceTimeGrid::h_max() const {
  double m = 0.0;
  for (int i = 0; i < spec_.n; ++i) m = std::max(m, h_[i]);
  return m;
}

std::array<int, 3> SpaceTimeGrid::multi(std::size_t s) const {
  std::array<int, 3> idx{0, 0, 0};
  idx[0] = static_cast<int>(s % spec_.nodes[0]);
  s /= spec_.nodes[0];
  idx[1] = static_cast<int>(s % spec_.nodes[1]);
  idx[2] = static_cast<int>(s / spec_.nodes[1]);
  return idx;
}

std::size_t SpaceTimeGrid::linear(const std::array<int, 3>& idx) const {
  return idx[0] + stride_[1] * idx[1] + stride_[2] * idx[2];
}

Point SpaceTimeGrid::x(std::size_t s) const {
  auto idx = multi(s);
  Point p{0.0, 0.0, 0.0};
  for (int i = 0; i < spec_.n; ++i) p[i] = spec_.lo[i] + idx[i] * h_[i];
  return p;
}

GridPtr build_grid(const GridSpec& spec) { return std::make_shared<const SpaceTimeGrid>(spec); }

void require_same_grid(const GridPtr& a, const GridPtr& b, const char* where) {
  require(a && b && a->same_as(*b), kMod, ErrorKind::Grid, std::string("grid mismatch in ") + where);
}

// ---------------------------------------------------------------- fields

Field::Field(GridPtr grid, double value) : grid_(std::move(grid)) {
  ns_ = grid_->spatial_size();
  values_.assign(grid_->size(), value);
}

Field::Field(GridPtr grid, std::vector<double> values) : grid_(std::move(grid)), values_(std::move(values)) {
  ns_ = grid_->spatial_size();
  require(values_.size() == grid_->size(), kMod, ErrorKind::Input, "field length does not match grid");
}

Field& Field::operator+=(const Field& o) {
  require_same_grid(grid_, o.grid_, "Field+=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
  return *this;
}
Field& Field::operator-=(const Field& o) {
  require_same_grid(grid_, o.grid_, "Field-=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
  return *this;
}
Field& Field::operator*=(double c) {
  for (auto& v : values_) v *= c;
  return *this;
}
bool Field::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}
Field operator+(Field a, const Field& b) { return a += b; }
Field operator-(Field a, const Field& b) { return a -= b; }
Field operator*(double c, Field a) { return a *= c; }
Field hadamard(const Field& a, const Field& b) {
  require_same_grid(a.grid(), b.grid(), "hadamard");
  Field r = a;
  for (std::size_t i = 0; i < r.size(); ++i) r[i] *= b[i];
  return r;
}

BoundaryField::BoundaryField(GridPtr grid, double value) : grid_(std::move(grid)) {
  nb_ = grid_->boundary_size();
  values_.assign(nb_ * grid_->nt(), value);
}
BoundaryField::BoundaryField(GridPtr grid, std::vector<double> values)
    : grid_(std::move(grid)), values_(std::move(values)) {
  nb_ = grid_->boundary_size();
  require(values_.size() == nb_ * grid_->nt(), kMod, ErrorKind::Input, "boundary field length does not match grid");
}
BoundaryField& BoundaryField::operator+=(const BoundaryField& o) {
  require_same_grid(grid_, o.grid_, "BoundaryField+=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
  return *this;
}
BoundaryField& BoundaryField::operator-=(const BoundaryField& o) {
  require_same_grid(grid_, o.grid_, "BoundaryField-=");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
  return *this;
}
BoundaryField& BoundaryField::operator*=(double c) {
  for (auto& v : values_) v *= c;
  return *this;
}
BoundaryField operator+(BoundaryField a, const BoundaryField& b) { return a += b; }
BoundaryField operator-(BoundaryField a, const BoundaryField& b) { return a -= b; }
BoundaryField operator*(double c, BoundaryField a) { return a *= c; }

// ---------------------------------------------------------- coefficients

namespace {
constexpr int kTri = 6;
inline int tri(int i, int j) {
  if (i > j) std::swap(i, j);
  static const int map[3][3] = {{0, 1, 2}, {1, 3, 4}, {2, 4, 5}};
  return map[i][j];
}
void store(double* dst, const MatrixCoefficient::Mat& m) {
  for (int i = 0; i < 3; ++i)
    for (int j = i; j < 3; ++j) dst[tri(i, j)] = m(i, j);
}
void check_symmetric(const MatrixCoefficient::Mat& m, int n) {
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      require(m(i, j) == m(j, i), kMod, ErrorKind::Input, "coefficient matrix is not symmetric");
}
}  // namespace

MatrixCoefficient MatrixCoefficient::identity(GridPtr grid) {
  auto m = constant(std::move(grid), Mat::Identity(), 1.0);
  m.identity_ = true;
  return m;
}

MatrixCoefficient MatrixCoefficient::constant(GridPtr grid, const Mat& m, double floor) {
  check_symmetric(m, grid->dim());
  MatrixCoefficient c;
  c.grid_ = std::move(grid);
  c.mode_ = Mode::Constant;
  c.data_.assign(kTri, 0.0);
  store(c.data_.data(), m);
  c.finalize(floor);
  return c;
}

MatrixCoefficient MatrixCoefficient::spatial(GridPtr grid, const std::function<Mat(const Point&)>& fn,
                                             double floor) {
  MatrixCoefficient c;
  c.grid_ = std::move(grid);
  c.mode_ = Mode::Spatial;
  std::size_t ns = c.grid_->spatial_size();
  c.data_.assign(kTri * ns, 0.0);
  for (std::size_t s = 0; s < ns; ++s) {
    Mat m = fn(c.grid_->x(s));
    check_symmetric(m, c.grid_->dim());
    store(c.data_.data() + kTri * s, m);
  }
  c.finalize(floor);
  return c;
}

MatrixCoefficient MatrixCoefficient::space_time(GridPtr grid, const std::function<Mat(double, const Point&)>& fn,
                                                double floor) {
  MatrixCoefficient c;
  c.grid_ = std::move(grid);
  c.mode_ = Mode::SpaceTime;
  std::size_t ns = c.grid_->spatial_size();
  c.data_.assign(kTri * ns * c.grid_->nt(), 0.0);
  for (int k = 0; k < c.grid_->nt(); ++k)
    for (std::size_t s = 0; s < ns; ++s) {
      Mat m = fn(c.grid_->t(k), c.grid_->x(s));
      check_symmetric(m, c.grid_->dim());
      store(c.data_.data() + kTri * (k * ns + s), m);
    }
  c.finalize(floor);
  return c;
}

void MatrixCoefficient::finalize(double floor) {
  int n = grid_->dim();
  diagonal_ = true;
  for (std::size_t p = 0; p < data_.size(); p += kTri)
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (data_[p + tri(i, j)] != 0.0) diagonal_ = false;
  double lam = min_eigenvalue();
  floor_ = floor > 0.0 ? floor : lam;
  require(lam > 0.0 && lam >= floor_ * (1.0 - 1e-12), kMod, ErrorKind::Input,
          "coefficient violates the ellipticity floor");
}

std::size_t MatrixCoefficient::offset(int k, std::size_t s) const {
  switch (mode_) {
    case Mode::Constant: return 0;
    case Mode::Spatial: return kTri * s;
    case Mode::SpaceTime: return kTri * (k * grid_->spatial_size() + s);
  }
  return 0;
}

double MatrixCoefficient::operator()(int k, std::size_t s, int i, int j) const {
  return data_[offset(k, s) + tri(i, j)];
}

MatrixCoefficient::Mat MatrixCoefficient::matrix(int k, std::size_t s) const {
  Mat m = Mat::Zero();
  const double* p = data_.data() + offset(k, s);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = p[tri(i, j)];
  return m;
}

double MatrixCoefficient::min_eigenvalue() const {
  int n = grid_->dim();
  double lam = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < data_.size(); p += kTri) {
    Eigen::MatrixXd m(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) m(i, j) = data_[p + tri(i, j)];
    if (n == 1) {
      lam = std::min(lam, m(0, 0));
      continue;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    lam = std::min(lam, es.eigenvalues()(0));
  }
  return lam;
}

// --------------------------------------------------------------- stencils

SpatialOperator stiffness(const SpaceTimeGrid& g, const MatrixCoefficient& a, int k) {
  const int n = g.dim();
  const std::size_t ni = g.interior_size(), nb = g.boundary_size();
  std::vector<Eigen::Triplet<double>> ti, tb;
  ti.reserve(ni * (1 + 2 * n + 4 * n * (n - 1)));
  auto add = [&](std::size_t row, std::size_t col, double v) {
    long is = g.interior_slot(col);
    if (is >= 0)
      ti.emplace_back(row, is, v);
    else
      tb.emplace_back(row, g.boundary_slot(col), v);
  };
  for (std::size_t r = 0; r < ni; ++r) {
    std::size_t s = g.interior_nodes()[r];
    for (int i = 0; i < n; ++i) {
      const double hi2 = g.h(i) * g.h(i);
      const std::size_t sp = s + g.stride(i), sm = s - g.stride(i);
      const double a0 = a(k, s, i, i);
      const double ap = 2.0 * a0 * a(k, sp, i, i) / (a0 + a(k, sp, i, i));
      const double am = 2.0 * a0 * a(k, sm, i, i) / (a0 + a(k, sm, i, i));
      add(r, s, (ap + am) / hi2);
      add(r, sp, -ap / hi2);
      add(r, sm, -am / hi2);
      if (a.is_diagonal()) continue;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        const double c = 1.0 / (4.0 * g.h(i) * g.h(j));
        const std::size_t sj = g.stride(j);
        // -d_i(a_ij d_j u), both derivatives centered
        add(r, sp + sj, -a(k, sp, i, j) * c);
        add(r, sp - sj, a(k, sp, i, j) * c);
        add(r, sm + sj, a(k, sm, i, j) * c);
        add(r, sm - sj, -a(k, sm, i, j) * c);
      }
    }
  }
  SpatialOperator op;
  op.II.resize(ni, ni);
  op.IB.resize(ni, nb);
  op.II.setFromTriplets(ti.begin(), ti.end());
  op.IB.setFromTriplets(tb.begin(), tb.end());
  return op;
}

SparseMat conormal_matrix(const SpaceTimeGrid& g, const MatrixCoefficient& a, int k) {
  const int n = g.dim();
  std::vector<Eigen::Triplet<double>> trip;
  for (std::size_t b = 0; b < g.boundary_size(); ++b) {
    const std::size_t s = g.boundary_nodes()[b];
    const auto idx = g.multi(s);
    const Point& nu = g.normal(b);
    for (int kk = 0; kk < n; ++kk) {
      double coef = 0.0;
      for (int i = 0; i < n; ++i) coef += nu[i] * a(k, s, i, kk);
      if (coef == 0.0) continue;
      const int N = g.count(kk);
      const double h = g.h(kk);
      const std::size_t st = g.stride(kk);
      if (idx[kk] == 0) {
        if (N >= 3) {
          trip.emplace_back(b, s, -1.5 * coef / h);
          trip.emplace_back(b, s + st, 2.0 * coef / h);
          trip.emplace_back(b, s + 2 * st, -0.5 * coef / h);
        } else {
          trip.emplace_back(b, s, -coef / h);
          trip.emplace_back(b, s + st, coef / h);
        }
      } else if (idx[kk] == N - 1) {
        if (N >= 3) {
          trip.emplace_back(b, s, 1.5 * coef / h);
          trip.emplace_back(b, s - st, -2.0 * coef / h);
          trip.emplace_back(b, s - 2 * st, 0.5 * coef / h);
        } else {
          trip.emplace_back(b, s, coef / h);
          trip.emplace_back(b, s - st, -coef / h);
        }
      } else {
        trip.emplace_back(b, s + st, 0.5 * coef / h);
        trip.emplace_back(b, s - st, -0.5 * coef / h);
      }
    }
  }
  SparseMat m(g.boundary_size(), g.spatial_size());
  m.setFromTriplets(trip.begin(), trip.end());
  return m;
}

// ------------------------------------------------------------- quadrature

double integrate_Omega(const Field& f, int k) {
  const auto& w = f.grid()->omega_weights();
  const double* v = f.level(k);
  double acc = 0.0;
  for (std::size_t s = 0; s < w.size(); ++s) acc += w[s] * v[s];
  return acc;
}

double integrate_Q(const Field& f) {
  require(!f.empty(), kMod, ErrorKind::Grid, "integrate_Q on empty field");
  const auto& wt = f.grid()->time_weights();
  double acc = 0.0;
  for (int k = 0; k < f.grid()->nt(); ++k) acc += wt[k] * integrate_Omega(f, k);
  return acc;
}

double integrate_Sigma(const BoundaryField& f) {
  const auto& g = *f.grid();
  const auto& wt = g.time_weights();
  const auto& ws = g.sigma_weights();
  double acc = 0.0;
  for (int k = 0; k < g.nt(); ++k) {
    double lvl = 0.0;
    for (std::size_t b = 0; b < ws.size(); ++b) lvl += ws[b] * f.at(k, b);
    acc += wt[k] * lvl;
  }
  return acc;
}

double l2_norm(const Field& f) { return std::sqrt(std::max(0.0, integrate_Q(hadamard(f, f)))); }
double l2_norm(const BoundaryField& f) {
  BoundaryField sq = f;
  for (auto& v : sq.values()) v *= v;
  return std::sqrt(std::max(0.0, integrate_Sigma(sq)));
}
double sup_norm(const Field& f) {
  double m = 0.0;
  for (double v : f.values()) m = std::max(m, std::abs(v));
  return m;
}
double sup_norm(const BoundaryField& f) {
  double m = 0.0;
  for (double v : f.values()) m = std::max(m, std::abs(v));
  return m;
}

// -------------------------------------------------------------- operators

BoundaryField conormal_derivative(const Field& u, const MatrixCoefficient& a) {
  require_same_grid(u.grid(), a.grid(), "conormal_derivative");
  const auto& g = *u.grid();
  BoundaryField out(u.grid());
  SparseMat m;
  for (int k = 0; k < g.nt(); ++k) {
    if (k == 0 || !a.time_static()) m = conormal_matrix(g, a, k);
    Eigen::Map<const Eigen::VectorXd> uk(u.level(k), g.spatial_size());
    Eigen::Map<Eigen::VectorXd>(out.values().data() + k * g.boundary_size(), g.boundary_size()) = m * uk;
  }
  return out;
}

Field apply_operator(const Field& u, const MatrixCoefficient& a, const Field& rho, TimeDifference td) {
  require_same_grid(u.grid(), a.grid(), "apply_operator");
  require_same_grid(u.grid(), rho.grid(), "apply_operator");
  const auto& g = *u.grid();
  const int nt = g.nt();
  require(td == TimeDifference::Backward || nt >= 3, kMod, ErrorKind::Config,
          "centered time difference needs nt >= 3");
  Field out(u.grid());
  const std::size_t ni = g.interior_size(), nb = g.boundary_size();
  const double dt = g.dt();
  SpatialOperator op;
  Eigen::VectorXd ui(ni), ub(nb);
  for (int k = 0; k < nt; ++k) {
    if (td == TimeDifference::Backward && k == 0) continue;
    if (op.II.rows() == 0 || !a.time_static()) op = stiffness(g, a, k);
    for (std::size_t r = 0; r < ni; ++r) ui[r] = u.at(k, g.interior_nodes()[r]);
    for (std::size_t b = 0; b < nb; ++b) ub[b] = u.at(k, g.boundary_nodes()[b]);
    Eigen::VectorXd au = op.II * ui + op.IB * ub;
    for (std::size_t r = 0; r < ni; ++r) {
      const std::size_t s = g.interior_nodes()[r];
      double ut;
      if (td == TimeDifference::Backward) {
        ut = (u.at(k, s) - u.at(k - 1, s)) / dt;
      } else if (k == 0) {
        ut = (-3.0 * u.at(0, s) + 4.0 * u.at(1, s) - u.at(2, s)) / (2.0 * dt);
      } else if (k == nt - 1) {
        ut = (3.0 * u.at(k, s) - 4.0 * u.at(k - 1, s) + u.at(k - 2, s)) / (2.0 * dt);
      } else {
        ut = (u.at(k + 1, s) - u.at(k - 1, s)) / (2.0 * dt);
      }
      out.at(k, s) = rho.at(k, s) * ut + au[r];
    }
  }
  return out;
}

Field sample(const GridPtr& grid, const std::function<double(double, const Point&)>& fn) {
  Field f(grid);
  for (int k = 0; k < grid->nt(); ++k) {
    const double t = grid->t(k);
    for (std::size_t s = 0; s < grid->spatial_size(); ++s) f.at(k, s) = fn(t, grid->x(s));
  }
  return f;
}

BoundaryField sample_boundary(const GridPtr& grid, const std::function<double(double, const Point&)>& fn) {
  BoundaryField f(grid);
  for (int k = 0; k < grid->nt(); ++k) {
    const double t = grid->t(k);
    for (std::size_t b = 0; b < grid->boundary_size(); ++b) f.at(k, b) = fn(t, grid->x(grid->boundary_nodes()[b]));
  }
  return f;
}

BoundaryField trace(const Field& u) {
  const auto& g = *u.grid();
  BoundaryField f(u.grid());
  for (int k = 0; k < g.nt(); ++k)
    for (std::size_t b = 0; b < g.boundary_size(); ++b) f.at(k, b) = u.at(k, g.boundary_nodes()[b]);
  return f;
}

Field constant_field(const GridPtr& grid, double value) { return Field(grid, value); }

// ------------------------------------------------------------------ dumps

void write_grid_csv(const SpaceTimeGrid& g, const std::string& path) {
  std::ofstream os(path);
  require(os.good(), kMod, ErrorKind::Input, "cannot open " + path);
  os << std::setprecision(17);
  os << "axis,count,spacing\n";
  for (int i = 0; i < g.dim(); ++i) os << i << ',' << g.count(i) << ',' << g.h(i) << '\n';
  os << "t," << g.nt() << ',' << g.dt() << '\n';
  os << "node,x0,x1,x2,boundary,nu0,nu1,nu2,omega_weight\n";
  for (std::size_t s = 0; s < g.spatial_size(); ++s) {
    Point p = g.x(s);
    long b = g.boundary_slot(s);
    Point nu = b >= 0 ? g.normal(b) : Point{0, 0, 0};
    os << s << ',' << p[0] << ',' << p[1] << ',' << p[2] << ',' << (b >= 0 ? 1 : 0) << ',' << nu[0] << ','
       << nu[1] << ',' << nu[2] << ',' << g.omega_weights()[s] << '\n';
  }
}

void write_field_csv(const Field& f, const std::string& path) {
  std::ofstream os(path);
  require(os.good(), kMod, ErrorKind::Input, "cannot open " + path);
  os << std::setprecision(17) << "level,node,value\n";
  const auto& g = *f.grid();
  for (int k = 0; k < g.nt(); ++k)
    for (std::size_t s = 0; s < g.spatial_size(); ++s) os << k << ',' << s << ',' << f.at(k, s) << '\n';
}

void write_boundary_csv(const BoundaryField& f, const std::string& path) {
  std::ofstream os(path);
  require(os.good(), kMod, ErrorKind::Input, "cannot open " + path);
  os << std::setprecision(17) << "level,slot,node,value\n";
  const auto& g = *f.grid();
  for (int k = 0; k < g.nt(); ++k)
    for (std::size_t b = 0; b < g.boundary_size(); ++b)
      os << k << ',' << b << ',' << g.boundary_nodes()[b] << ',' << f.at(k, b) << '\n';
}

void write_field_binary(const Field& f, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  require(os.good(), kMod, ErrorKind::Input, "cannot open " + path);
  const auto& g = *f.grid();
  std::int64_t hdr[8] = {kMagic, kVersion, g.dim(), g.nt(), g.count(0), g.count(1), g.count(2),
                         static_cast<std::int64_t>(f.size())};
  os.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
  os.write(reinterpret_cast<const char*>(f.values().data()), sizeof(double) * f.size());
}

Field read_field_binary(const GridPtr& grid, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), kMod, ErrorKind::Input, "cannot open " + path);
  std::int64_t hdr[8];
  is.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
  require(is.good() && hdr[0] == kMagic && hdr[1] == kVersion, kMod, ErrorKind::Input, "bad field header in " + path);
  require(hdr[2] == grid->dim() && hdr[3] == grid->nt() && hdr[4] == grid->count(0) && hdr[5] == grid->count(1) &&
              hdr[6] == grid->count(2) && hdr[7] == static_cast<std::int64_t>(grid->size()),
          kMod, ErrorKind::Grid, "field dump does not match grid");
  std::vector<double> v(grid->size());
  is.read(reinterpret_cast<char*>(v.data()), sizeof(double) * v.size());
  require(is.good(), kMod, ErrorKind::Input, "truncated field dump " + path);
  return Field(grid, std::move(v));
}

}  // namespace ibvp
