#include "ibvp/rays.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "ibvp/error.hpp"

namespace ibvp {
namespace {
const char* kMod = "ray_reconstruct";

double min_h(const SpaceTimeGrid& g) {
  double h = g.h(0);
  for (int i = 1; i < g.dim(); ++i) h = std::min(h, g.h(i));
  return h;
}

Point center_of(const SpaceTimeGrid& g) {
  Point c{0.0, 0.0, 0.0};
  for (int i = 0; i < g.dim(); ++i) c[i] = 0.5 * (g.spec().lo[i] + g.spec().hi[i]);
  return c;
}

double half_diagonal(const SpaceTimeGrid& g) {
  double d2 = 0.0;
  for (int i = 0; i < g.dim(); ++i) d2 += 0.25 * std::pow(g.spec().hi[i] - g.spec().lo[i], 2);
  return std::sqrt(d2);
}

// Nodes and weights of the multilinear interpolant at x (inside the closed box).
int stencil(const SpaceTimeGrid& g, const Point& x, std::size_t* nodes, double* weights) {
  const int n = g.dim();
  std::array<int, 3> base{0, 0, 0};
  std::array<double, 3> frac{0.0, 0.0, 0.0};
  for (int i = 0; i < n; ++i) {
    const double u = (x[i] - g.spec().lo[i]) / g.h(i);
    int c = static_cast<int>(std::floor(u));
    c = std::clamp(c, 0, g.count(i) - 2);
    base[i] = c;
    frac[i] = std::clamp(u - c, 0.0, 1.0);
  }
  int m = 0;
  for (int corner = 0; corner < (1 << n); ++corner) {
    std::array<int, 3> idx{0, 0, 0};
    double w = 1.0;
    for (int i = 0; i < n; ++i) {
      const int b = (corner >> i) & 1;
      idx[i] = base[i] + b;
      w *= b ? frac[i] : 1.0 - frac[i];
    }
    nodes[m] = g.linear(idx);
    weights[m] = w;
    ++m;
  }
  return m;
}

bool inside(const SpaceTimeGrid& g, const Point& x) {
  for (int i = 0; i < g.dim(); ++i)
    if (x[i] < g.spec().lo[i] - 1e-12 || x[i] > g.spec().hi[i] + 1e-12) return false;
  return true;
}

template <class Fn>
void for_each_node(const SpaceTimeGrid& g, const Ray& r, double step_fraction, Fn&& fn) {
  if (!r.hits) return;
  const double L = r.length();
  const int m = std::max(1, static_cast<int>(std::ceil(L / (step_fraction * min_h(g)))));
  const double ds = L / m;
  for (int i = 0; i < m; ++i) fn(r.at(r.entry + (i + 0.5) * ds), ds);
}

Point unit_dir(double angle) { return {std::cos(angle), std::sin(angle), 0.0}; }

// Directions from y fanning across the angle subtended by the box (in the x0-x1
// plane; in 3D also across the x2 elevation).
std::vector<Point> fan_directions(const SpaceTimeGrid& g, const Point& y, int directions) {
  const Point c = center_of(g);
  const double base = std::atan2(c[1] - y[1], c[0] - y[0]);
  double half = 0.0, half_z = 0.0;
  const int n = g.dim();
  for (int corner = 0; corner < (1 << n); ++corner) {
    Point p{};
    for (int i = 0; i < n; ++i) p[i] = ((corner >> i) & 1) ? g.spec().hi[i] : g.spec().lo[i];
    double a = std::atan2(p[1] - y[1], p[0] - y[0]) - base;
    a = std::remainder(a, 2.0 * std::numbers::pi);
    half = std::max(half, std::abs(a));
    if (n == 3) {
      const double rho = std::hypot(p[0] - y[0], p[1] - y[1]);
      half_z = std::max(half_z, std::abs(std::atan2(p[2] - y[2], rho)));
    }
  }
  std::vector<Point> out;
  for (int j = 0; j < directions; ++j) {
    const double a = base - half + (j + 0.5) * 2.0 * half / directions;
    if (n == 2) {
      out.push_back(unit_dir(a));
      continue;
    }
    for (int l = 0; l < directions; ++l) {
      const double e = -half_z + (l + 0.5) * 2.0 * half_z / directions;
      out.push_back({std::cos(e) * std::cos(a), std::cos(e) * std::sin(a), std::sin(e)});
    }
  }
  return out;
}

RaySet build_fan(const SpaceTimeGrid& g, const std::vector<double>& angles, int directions, double radius_factor) {
  require(directions >= 1, kMod, ErrorKind::Config, "at least one direction per source");
  require(radius_factor > 1.0, kMod, ErrorKind::Config, "sources must lie outside the box");
  const Point c = center_of(g);
  const double R = radius_factor * half_diagonal(g);
  std::vector<Ray> rays;
  for (double a : angles) {
    Point y = c;
    y[0] += R * std::cos(a);
    y[1] += R * std::sin(a);
    for (const Point& d : fan_directions(g, y, directions)) rays.push_back(make_ray(g, y, d));
  }
  return RaySet(g, std::move(rays));
}
}  // namespace

Ray make_ray(const SpaceTimeGrid& g, const Point& source, const Point& dir) {
  const int n = g.dim();
  double norm = 0.0;
  for (int i = 0; i < n; ++i) norm += dir[i] * dir[i];
  norm = std::sqrt(norm);
  require(norm > 0.0, kMod, ErrorKind::Input, "ray direction must be nonzero");
  Ray r;
  r.source = source;
  r.dir = {0.0, 0.0, 0.0};
  for (int i = 0; i < n; ++i) r.dir[i] = dir[i] / norm;
  require(!inside(g, source), kMod, ErrorKind::Geometry, "ray sources must lie outside the closed box");
  double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    const double a = g.spec().lo[i], b = g.spec().hi[i];
    if (std::abs(r.dir[i]) < 1e-15) {
      if (source[i] < a || source[i] > b) lo = hi = 0.0;
      continue;
    }
    double t1 = (a - source[i]) / r.dir[i], t2 = (b - source[i]) / r.dir[i];
    if (t1 > t2) std::swap(t1, t2);
    lo = std::max(lo, t1);
    hi = std::min(hi, t2);
  }
  r.hits = hi > lo && hi > 0.0;
  if (r.hits) {
    r.entry = std::max(lo, 0.0);
    r.exit = hi;
  }
  return r;
}

RaySet::RaySet(const SpaceTimeGrid& g, std::vector<Ray> rays) : dim_(g.dim()), rays_(std::move(rays)) {
  for (const Ray& r : rays_) {
    double n2 = 0.0;
    for (int i = 0; i < dim_; ++i) n2 += r.dir[i] * r.dir[i];
    require(std::abs(n2 - 1.0) < 1e-10, kMod, ErrorKind::Input, "ray directions must be unit vectors");
  }
}

RaySet RaySet::fan(const SpaceTimeGrid& g, int sources, int directions, double radius_factor) {
  require(sources >= 1, kMod, ErrorKind::Config, "at least one source");
  std::vector<double> angles;
  for (int i = 0; i < sources; ++i) angles.push_back(2.0 * std::numbers::pi * (i + 0.5) / sources);
  return build_fan(g, angles, directions, radius_factor);
}

RaySet RaySet::fan_near(const SpaceTimeGrid& g, const Point& x0, double spread, int sources, int directions,
                        double radius_factor) {
  require(sources >= 1, kMod, ErrorKind::Config, "at least one source");
  const Point c = center_of(g);
  const double mid = std::atan2(x0[1] - c[1], x0[0] - c[0]);
  std::vector<double> angles;
  for (int i = 0; i < sources; ++i)
    angles.push_back(sources == 1 ? mid : mid - spread + 2.0 * spread * i / (sources - 1));
  return build_fan(g, angles, directions, radius_factor);
}

std::size_t RaySet::misses() const {
  return static_cast<std::size_t>(std::count_if(rays_.begin(), rays_.end(), [](const Ray& r) { return !r.hits; }));
}

RaySet RaySet::restricted_to_ball(const Point& x0, double eps) const {
  RaySet out = *this;
  out.rays_.clear();
  for (const Ray& r : rays_) {
    double d2 = 0.0;
    for (int i = 0; i < dim_; ++i) d2 += (r.source[i] - x0[i]) * (r.source[i] - x0[i]);
    if (d2 <= eps * eps) out.rays_.push_back(r);
  }
  return out;
}

double interpolate(const SpaceTimeGrid& g, const std::vector<double>& values, const Point& x) {
  require(values.size() == g.spatial_size(), kMod, ErrorKind::Input, "slice size does not match the grid");
  if (!inside(g, x)) return 0.0;
  std::size_t nodes[8];
  double w[8];
  const int m = stencil(g, x, nodes, w);
  double acc = 0.0;
  for (int i = 0; i < m; ++i) acc += w[i] * values[nodes[i]];
  return acc;
}

RayData ray_transform(const SpaceTimeGrid& g, const std::vector<double>& slice, const RaySet& rays) {
  require(slice.size() == g.spatial_size(), kMod, ErrorKind::Input, "slice size does not match the grid");
  require(rays.dim() == g.dim(), kMod, ErrorKind::Input, "ray set and grid dimensions differ");
  RayData out;
  out.values.assign(rays.size(), 0.0);
  out.missed.assign(rays.size(), 0);
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const Ray& ray = rays[r];
    if (!ray.hits) {
      out.missed[r] = 1;
      continue;
    }
    double acc = 0.0;
    for_each_node(g, ray, rays.step_fraction, [&](const Point& x, double ds) { acc += ds * interpolate(g, slice, x); });
    out.values[r] = acc;
  }
  return out;
}

SparseMat ray_matrix(const SpaceTimeGrid& g, const RaySet& rays) {
  std::vector<Eigen::Triplet<double>> trip;
  for (std::size_t r = 0; r < rays.size(); ++r) {
    for_each_node(g, rays[r], rays.step_fraction, [&](const Point& x, double ds) {
      std::size_t nodes[8];
      double w[8];
      const int m = stencil(g, x, nodes, w);
      for (int i = 0; i < m; ++i)
        if (w[i] != 0.0) trip.emplace_back(static_cast<int>(r), static_cast<int>(nodes[i]), ds * w[i]);
    });
  }
  SparseMat A(static_cast<int>(rays.size()), static_cast<int>(g.spatial_size()));
  A.setFromTriplets(trip.begin(), trip.end());
  return A;
}

SparseMat gradient_matrix(const SpaceTimeGrid& g) {
  const int n = g.dim();
  double vol = 1.0;
  for (int i = 0; i < n; ++i) vol *= g.h(i);
  const double scale = std::sqrt(vol);
  std::vector<Eigen::Triplet<double>> trip;
  int row = 0;
  for (std::size_t s = 0; s < g.spatial_size(); ++s) {
    const auto idx = g.multi(s);
    for (int a = 0; a < n; ++a) {
      if (idx[a] + 1 >= g.count(a)) continue;
      const double c = scale / g.h(a);
      trip.emplace_back(row, static_cast<int>(s + g.stride(a)), c);
      trip.emplace_back(row, static_cast<int>(s), -c);
      ++row;
    }
  }
  SparseMat R(row, static_cast<int>(g.spatial_size()));
  R.setFromTriplets(trip.begin(), trip.end());
  return R;
}

RayInversion invert_rays(const std::vector<double>& data, const RaySet& rays, const SpaceTimeGrid& g, double lambda,
                         double oversampling) {
  require(data.size() == rays.size(), kMod, ErrorKind::Input, "one datum per ray is required");
  require(lambda > 0.0, kMod, ErrorKind::Config, "lambda_reg must be positive");
  const std::size_t N = g.spatial_size();
  std::size_t used = 0;
  for (const Ray& r : rays.rays()) used += r.hits ? 1 : 0;
  if (static_cast<double>(used) < oversampling * static_cast<double>(N))
    fail(kMod, ErrorKind::Numeric,
         "rank deficiency: " + std::to_string(used) + " rays for " + std::to_string(N) + " unknowns (oversampling " +
             std::to_string(oversampling) + ")");
  const SparseMat A = ray_matrix(g, rays);
  const SparseMat R = gradient_matrix(g);
  SparseMat AtA = SparseMat(A.transpose()) * A;
  SparseMat RtR = SparseMat(R.transpose()) * R;
  // lambda is relative to the ratio of the traces
  double ta = 0.0, tr = 0.0;
  for (int i = 0; i < AtA.rows(); ++i) {
    ta += AtA.coeff(i, i);
    tr += RtR.coeff(i, i);
  }
  const double lam = lambda * ta / tr;
  SparseMat Nm = AtA + lam * RtR;
  Eigen::Map<const Eigen::VectorXd> d(data.data(), static_cast<Eigen::Index>(data.size()));
  const Eigen::VectorXd rhs = A.transpose() * d;

  RayInversion out;
  out.rays_used = used;
  out.unknowns = N;
  Eigen::VectorXd x;
  if (N <= 6000) {
    Eigen::MatrixXd dense(Nm);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(dense);
    require(ldlt.info() == Eigen::Success, kMod, ErrorKind::Numeric, "normal matrix factorization failed");
    x = ldlt.solve(rhs);
    out.sigma_min = std::sqrt(std::max(0.0, ldlt.vectorD().minCoeff()));
  } else {
    Eigen::ConjugateGradient<SparseMat, Eigen::Lower | Eigen::Upper> cg;
    cg.setTolerance(1e-12);
    cg.setMaxIterations(20000);
    cg.compute(Nm);
    x = cg.solve(rhs);
    double dmin = std::numeric_limits<double>::infinity();
    for (int i = 0; i < Nm.rows(); ++i) dmin = std::min(dmin, Nm.coeff(i, i));
    out.sigma_min = std::sqrt(dmin);
  }
  out.values.assign(x.data(), x.data() + x.size());
  const double dn = d.norm();
  out.residual = dn > 0.0 ? (A * x - d).norm() / dn : 0.0;
  return out;
}

double relative_l2(const SpaceTimeGrid& g, const std::vector<double>& estimate, const std::vector<double>& truth) {
  require(estimate.size() == truth.size() && truth.size() == g.spatial_size(), kMod, ErrorKind::Input,
          "slice sizes differ");
  const auto& w = g.omega_weights();
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    num += w[i] * (estimate[i] - truth[i]) * (estimate[i] - truth[i]);
    den += w[i] * truth[i] * truth[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

std::vector<double> level_values(const Field& f, int k) {
  const double* p = f.level(k);
  return std::vector<double>(p, p + f.grid()->spatial_size());
}

}  // namespace ibvp
