#pragma once

#include <string>
#include <vector>

#include "ibvp/grid.hpp"

namespace ibvp {

struct Ray {
  Point source{0.0, 0.0, 0.0};
  Point dir{1.0, 0.0, 0.0};   // unit
  double entry = 0.0;         // arc length from the source where the chord enters the closed box
  double exit = 0.0;
  bool hits = false;
  Point at(double s) const { return {source[0] + s * dir[0], source[1] + s * dir[1], source[2] + s * dir[2]}; }
  double length() const { return hits ? exit - entry : 0.0; }
};

// Straight rays from exterior sources through the box of a grid.
class RaySet {
 public:
  RaySet() = default;
  RaySet(const SpaceTimeGrid& g, std::vector<Ray> rays);

  // Sources evenly spaced on a circle (sphere ring in 3D, in the x0-x1 plane)
  // of the given radius around the box center; from each source the
  // directions fan uniformly across the angle subtended by the box.
  static RaySet fan(const SpaceTimeGrid& g, int sources, int directions, double radius_factor = 1.5);
  // Sources on an arc of half-opening `spread` radians around the direction from
  // the box center towards x0.
  static RaySet fan_near(const SpaceTimeGrid& g, const Point& x0, double spread, int sources, int directions,
                         double radius_factor = 1.5);

  int dim() const { return dim_; }
  std::size_t size() const { return rays_.size(); }
  const std::vector<Ray>& rays() const { return rays_; }
  const Ray& operator[](std::size_t i) const { return rays_[i]; }
  std::size_t misses() const;
  // Rays whose source lies in the closed ball B(x0, eps).
  RaySet restricted_to_ball(const Point& x0, double eps) const;

  // Quadrature spacing along each chord, as a fraction of the smallest mesh width.
  double step_fraction = 0.25;

 private:
  int dim_ = 2;
  std::vector<Ray> rays_;
};

// Clips the line source + s dir against the closed box; hits = false when it misses.
Ray make_ray(const SpaceTimeGrid& g, const Point& source, const Point& dir);

// Bilinear (trilinear) interpolation of nodal values; zero outside the box.
double interpolate(const SpaceTimeGrid& g, const std::vector<double>& values, const Point& x);

struct RayData {
  std::vector<double> values;
  std::vector<char> missed;   // 1 where the ray does not meet the box (value 0)
};

// Chord integrals of one spatial slice (values per spatial node) by composite
// midpoint quadrature with multilinear interpolation.
RayData ray_transform(const SpaceTimeGrid& g, const std::vector<double>& slice, const RaySet& rays);

// Sparse ray matrix: row r holds the quadrature weights of ray r on the nodal values.
SparseMat ray_matrix(const SpaceTimeGrid& g, const RaySet& rays);

// Discrete gradient on the spatial grid, rows scaled by the square root of the
// dual cell volume, so that |R x|^2 approximates int |grad x|^2.
SparseMat gradient_matrix(const SpaceTimeGrid& g);

struct RayInversion {
  std::vector<double> values;   // per spatial node
  double residual = 0.0;        // |A x - d| / |d| (0 for zero data)
  double sigma_min = 0.0;       // sqrt of the smallest pivot of the regularized normal matrix
  std::size_t rays_used = 0;
  std::size_t unknowns = 0;
};

// Tikhonov-regularized least squares min |A x - d|^2 + lambda |R x|^2.
// Throws a Numeric error when rays < oversampling * unknowns.
RayInversion invert_rays(const std::vector<double>& data, const RaySet& rays, const SpaceTimeGrid& g,
                         double lambda, double oversampling = 3.0);

// Relative L2 (omega-weighted) difference of two spatial slices.
double relative_l2(const SpaceTimeGrid& g, const std::vector<double>& estimate, const std::vector<double>& truth);

std::vector<double> level_values(const Field& f, int k);

}  // namespace ibvp
