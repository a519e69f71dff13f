#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ibvp/forward.hpp"

namespace ibvp {

enum class StencilType { ForwardProduct, CentralProduct };

// Mixed derivative d^m/ds_1..ds_m at s = 0 as a weighted sum over corners.
struct LinearizationStencil {
  int order = 1;
  std::vector<double> steps;
  StencilType type = StencilType::CentralProduct;
  std::vector<std::vector<double>> corners;  // s-vectors
  std::vector<double> weights;

  static LinearizationStencil make(int order, std::vector<double> steps, StencilType type);
  // Applies the stencil to a scalar function of s.
  template <class Fn>
  double apply(Fn&& fn) const {
    double acc = 0.0;
    for (std::size_t c = 0; c < corners.size(); ++c) acc += weights[c] * fn(corners[c]);
    return acc;
  }
};

enum class Provenance { FiniteDifference, DirectSolve };
const char* to_string(Provenance p);

// Index sets of directions are bitmasks: bit i stands for h_{i+1}.
using IndexSet = std::uint32_t;

struct LinearizedSolution {
  int order = 0;
  Provenance provenance = Provenance::DirectSolve;
  std::vector<Field> v;               // first-order solutions (direct) or fd derivatives per direction
  std::map<IndexSet, Field> w;        // mixed derivatives for index sets of size >= 2
  Field H;                            // right-hand side of the top-order problem (direct only)
  BoundaryField flux;                 // top-order mixed derivative of the conormal flux
  std::vector<double> steps;          // fd step per direction
  // Top-order field: w of the full index set, or v_1 when order = 1.
  const Field& top() const;
};

// All set partitions of `set` (as lists of blocks).
std::vector<std::vector<IndexSet>> set_partitions(IndexSet set);

Field first_linearized(const MatrixCoefficient& a, const Field& rho, const NonlinearityModel& b, const Field& u0,
                       const BoundaryField& h, double theta = 0.5);

// -sum over partitions with >= 2 blocks of d^{|pi|} b(u0) prod W_block. W must hold every
// proper nonempty subset of `set` (singletons are the v_i).
Field faa_di_bruno_rhs(const NonlinearityModel& b, const Field& u0, const std::map<IndexSet, Field>& W, IndexSet set);

LinearizedSolution higher_linearized(const MatrixCoefficient& a, const Field& rho, const NonlinearityModel& b,
                                     const Field& u0, const std::vector<BoundaryField>& h, double theta = 0.5);

struct FdOptions {
  StencilType type = StencilType::CentralProduct;
  double s = 0.0;            // 0: default 1e-3 (forward) or 1e-2 (central)
  bool normalize = true;     // s_i = s / |h_i|_inf
  SolveOptions solve{};
  int threads = 1;
  const Field* F = nullptr;  // source term of the sourced problem
};

// Mixed s-derivative of u_s and of its flux at s = 0, where
// u_s solves the problem with data f0 + sum s_i h_i.
LinearizedSolution fd_linearized(const MatrixCoefficient& a, const Field& rho, const NonlinearityModel& b,
                                 const BoundaryField& f0, const std::vector<BoundaryField>& h,
                                 const FdOptions& opts = {});

// Backward solve of -dt(rho w) + A w + q w = F with w(T) = 0 and lateral data g.
Field adjoint_solution(const MatrixCoefficient& a, const Field& rho, const Field& q, const Field* F = nullptr,
                       const BoundaryField* g = nullptr, double theta = 0.5);

// Directory of binary field dumps plus manifest.json.
void write_linearized(const LinearizedSolution& s, const std::string& dir);

}  // namespace ibvp
