#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ibvp/forward.hpp"

namespace ibvp {

// Mother profile C (1 - s^2)^3 on (-1, 1) with unit L2 norm.
double chi_star(double s);
double chi_star_prime(double s);

struct GOSpec {
  Point y{-1.0, 0.5, 0.0};   // exterior source point
  double tau = 8.0;
  int sign = +1;             // +1: forward solution v, -1: adjoint solution w
  std::function<double(const Point&)> h;  // angular profile of c+, unit direction argument; empty = 1
  double t0 = 0.5;
  double delta = 0.25;
  bool static_metric = true;  // rho = 1, a = Id

  double chi(double t) const;
  double chi_prime(double t) const;
  double angular(const Point& theta) const { return h ? h(theta) : 1.0; }
};

// Checks the exterior point, time window and metric restriction.
void validate(const GOSpec& spec, const SpaceTimeGrid& g);

// psi(x) = |x - y|, constant in time.
Field phase(const GridPtr& g, const Point& y);

struct Amplitudes {
  Field plus;
  Field minus;
};
Amplitudes amplitudes(const GridPtr& g, const GOSpec& spec);

// Discrete J(+/-) c(+/-) at interior nodes with centered differences.
Field transport_residual(const GridPtr& g, const GOSpec& spec, int sign);

// L(+/-) c(+/-) at interior nodes.
Field go_source(const MatrixCoefficient& a, const Field& rho, const Field& q, const GOSpec& spec);

struct Remainder {
  Field R;
  double tau = 0.0;
  int sign = +1;
  double l2 = 0.0;   // L2(Q)
  double h1 = 0.0;   // L2(0,T;H1)
  double source_l2 = 0.0;
  bool upwind = false;
};

// Solves P(tau, +/-) R = -L(+/-) c(+/-) with zero lateral data and zero initial (final) data.
Remainder remainder(const MatrixCoefficient& a, const Field& rho, const Field& q, const GOSpec& spec,
                    double theta = 1.0);

struct Assembled {
  Field field;
  bool clamped = false;
  double max_exponent = 0.0;   // largest exponent before clamping
  double residual = 0.0;       // |P(c + R)|_inf / |L c|_inf on interior nodes
};

// v = e^{tau^2 t + tau psi}(c + R) (sign +) or w = e^{-...}(c + R) (sign -), exponents clamped to +-700.
Assembled assemble(const GOSpec& spec, const Field& c, const Field& R, const MatrixCoefficient& a,
                   const Field& rho, const Field& q);

// Product form of v w: the exponentials cancel exactly.
Field pairing(const Field& c_plus, const Field& R_plus, const Field& c_minus, const Field& R_minus);

struct DecayRow {
  double tau = 0.0;
  double l2 = 0.0;
  double h1 = 0.0;
  bool upwind = false;
};
struct DecayReport {
  std::vector<DecayRow> rows;
  double slope_l2 = 0.0;
  double slope_h1 = 0.0;
};

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

DecayReport decay_sweep(const MatrixCoefficient& a, const Field& rho, const Field& q, const GOSpec& spec,
                        const std::vector<double>& taus, int threads = 1);

// "tau,l2,h1,upwind" rows followed by a "slope" row.
void write_decay_csv(const DecayReport& r, const std::string& path);

}  // namespace ibvp
