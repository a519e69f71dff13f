#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ibvp {

using Point = std::array<double, 3>;
using SparseMat = Eigen::SparseMatrix<double>;

// Axis-aligned box Omega in n dims times (0,T). nodes are per-axis node
// counts, nt the number of time levels (dt = T/(nt-1)).
struct GridSpec {
  int n = 2;
  Point lo{0.0, 0.0, 0.0};
  Point hi{1.0, 1.0, 1.0};
  std::array<int, 3> nodes{2, 2, 2};
  double T = 1.0;
  int nt = 2;

  static GridSpec unit(int n, int nodes_per_axis, int nt, double T = 1.0);
  bool operator==(const GridSpec& o) const;
};

class SpaceTimeGrid {
 public:
  explicit SpaceTimeGrid(const GridSpec& spec);

  const GridSpec& spec() const { return spec_; }
  int dim() const { return spec_.n; }
  int nt() const { return spec_.nt; }
  double T() const { return spec_.T; }
  double dt() const { return dt_; }
  double t(int k) const { return k * dt_; }
  int count(int axis) const { return axis < spec_.n ? spec_.nodes[axis] : 1; }
  double h(int axis) const { return h_[axis]; }
  double h_max() const;
  std::size_t stride(int axis) const { return stride_[axis]; }

  std::size_t spatial_size() const { return ns_; }
  std::size_t size() const { return ns_ * static_cast<std::size_t>(spec_.nt); }
  std::size_t boundary_size() const { return boundary_.size(); }
  std::size_t interior_size() const { return interior_.size(); }

  std::array<int, 3> multi(std::size_t s) const;
  std::size_t linear(const std::array<int, 3>& idx) const;
  Point x(std::size_t s) const;
  bool is_boundary(std::size_t s) const { return slot_[s] < 0; }

  const std::vector<std::size_t>& boundary_nodes() const { return boundary_; }
  const std::vector<std::size_t>& interior_nodes() const { return interior_; }
  // Position of a spatial node in boundary_nodes() (or interior_nodes()); -1 if absent.
  long boundary_slot(std::size_t s) const { return slot_[s] < 0 ? -slot_[s] - 1 : -1; }
  long interior_slot(std::size_t s) const { return slot_[s] >= 0 ? slot_[s] : -1; }
  const Point& normal(std::size_t slot) const { return normals_[slot]; }

  const std::vector<double>& omega_weights() const { return w_omega_; }
  const std::vector<double>& sigma_weights() const { return w_sigma_; }
  const std::vector<double>& time_weights() const { return w_time_; }

  bool same_as(const SpaceTimeGrid& other) const { return this == &other || spec_ == other.spec_; }

 private:
  GridSpec spec_;
  double dt_ = 0.0;
  Point h_{1.0, 1.0, 1.0};
  std::array<std::size_t, 3> stride_{1, 1, 1};
  std::size_t ns_ = 0;
  std::vector<long> slot_;
  std::vector<std::size_t> boundary_, interior_;
  std::vector<Point> normals_;
  std::vector<double> w_omega_, w_sigma_, w_time_;
};

using GridPtr = std::shared_ptr<const SpaceTimeGrid>;

GridPtr build_grid(const GridSpec& spec);

void require_same_grid(const GridPtr& a, const GridPtr& b, const char* where);

class Field {
 public:
  Field() = default;
  explicit Field(GridPtr grid, double value = 0.0);
  Field(GridPtr grid, std::vector<double> values);

  const GridPtr& grid() const { return grid_; }
  bool empty() const { return !grid_; }
  std::size_t size() const { return values_.size(); }
  double& at(int k, std::size_t s) { return values_[k * ns_ + s]; }
  double at(int k, std::size_t s) const { return values_[k * ns_ + s]; }
  double* level(int k) { return values_.data() + k * ns_; }
  const double* level(int k) const { return values_.data() + k * ns_; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  Field& operator+=(const Field& o);
  Field& operator-=(const Field& o);
  Field& operator*=(double c);
  bool all_finite() const;

 private:
  GridPtr grid_;
  std::size_t ns_ = 0;
  std::vector<double> values_;
};

Field operator+(Field a, const Field& b);
Field operator-(Field a, const Field& b);
Field operator*(double c, Field a);
Field hadamard(const Field& a, const Field& b);

class BoundaryField {
 public:
  BoundaryField() = default;
  explicit BoundaryField(GridPtr grid, double value = 0.0);
  BoundaryField(GridPtr grid, std::vector<double> values);

  const GridPtr& grid() const { return grid_; }
  bool empty() const { return !grid_; }
  std::size_t size() const { return values_.size(); }
  double& at(int k, std::size_t slot) { return values_[k * nb_ + slot]; }
  double at(int k, std::size_t slot) const { return values_[k * nb_ + slot]; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  BoundaryField& operator+=(const BoundaryField& o);
  BoundaryField& operator-=(const BoundaryField& o);
  BoundaryField& operator*=(double c);

 private:
  GridPtr grid_;
  std::size_t nb_ = 0;
  std::vector<double> values_;
};

BoundaryField operator+(BoundaryField a, const BoundaryField& b);
BoundaryField operator-(BoundaryField a, const BoundaryField& b);
BoundaryField operator*(double c, BoundaryField a);

// Symmetric n x n matrix per node, stored as its upper triangle.
class MatrixCoefficient {
 public:
  enum class Mode { Constant, Spatial, SpaceTime };
  using Mat = Eigen::Matrix3d;

  MatrixCoefficient() = default;
  static MatrixCoefficient identity(GridPtr grid);
  static MatrixCoefficient constant(GridPtr grid, const Mat& m, double floor = 0.0);
  static MatrixCoefficient spatial(GridPtr grid, const std::function<Mat(const Point&)>& fn, double floor = 0.0);
  static MatrixCoefficient space_time(GridPtr grid, const std::function<Mat(double, const Point&)>& fn,
                                      double floor = 0.0);

  const GridPtr& grid() const { return grid_; }
  Mode mode() const { return mode_; }
  bool time_static() const { return mode_ != Mode::SpaceTime; }
  bool is_identity() const { return identity_; }
  bool is_diagonal() const { return diagonal_; }
  double floor() const { return floor_; }
  double operator()(int k, std::size_t s, int i, int j) const;
  Mat matrix(int k, std::size_t s) const;
  double min_eigenvalue() const;

 private:
  void finalize(double floor);
  std::size_t offset(int k, std::size_t s) const;
  GridPtr grid_;
  Mode mode_ = Mode::Constant;
  bool identity_ = false;
  bool diagonal_ = true;
  double floor_ = 0.0;
  std::vector<double> data_;
};

// Discrete (A(t_k) u) restricted to interior rows, split into interior and
// boundary columns.
struct SpatialOperator {
  SparseMat II;
  SparseMat IB;
};
SpatialOperator stiffness(const SpaceTimeGrid& grid, const MatrixCoefficient& a, int k);

// Rows: boundary slots, columns: all spatial nodes.
SparseMat conormal_matrix(const SpaceTimeGrid& grid, const MatrixCoefficient& a, int k);

enum class TimeDifference { Backward, Centered };

double integrate_Q(const Field& f);
double integrate_Omega(const Field& f, int k);
double integrate_Sigma(const BoundaryField& f);
double l2_norm(const Field& f);
double l2_norm(const BoundaryField& f);
double sup_norm(const Field& f);
double sup_norm(const BoundaryField& f);

BoundaryField conormal_derivative(const Field& u, const MatrixCoefficient& a);
// rho dt u + A(t) u on interior nodes. Backward: level 0 is 0. Centered: second
// order at every level (needs nt >= 3).
Field apply_operator(const Field& u, const MatrixCoefficient& a, const Field& rho,
                     TimeDifference td = TimeDifference::Backward);

Field sample(const GridPtr& grid, const std::function<double(double, const Point&)>& fn);
BoundaryField sample_boundary(const GridPtr& grid, const std::function<double(double, const Point&)>& fn);
BoundaryField trace(const Field& u);
Field constant_field(const GridPtr& grid, double value);

void write_grid_csv(const SpaceTimeGrid& grid, const std::string& path);
void write_field_csv(const Field& f, const std::string& path);
void write_boundary_csv(const BoundaryField& f, const std::string& path);
void write_field_binary(const Field& f, const std::string& path);
Field read_field_binary(const GridPtr& grid, const std::string& path);

}  // namespace ibvp
