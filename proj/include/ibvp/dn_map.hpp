#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ibvp/forward.hpp"

namespace ibvp {

// Set of lateral-boundary slots.
class BoundaryRegion {
 public:
  BoundaryRegion() = default;
  BoundaryRegion(GridPtr grid, std::vector<char> mask, std::string name);

  static BoundaryRegion full(const GridPtr& g);
  // {x : (x - x0).nu >= 0}
  static BoundaryRegion front(const GridPtr& g, const Point& x0);
  // {x : (x - x0).nu <= eps}; eps = 0 is the back set.
  static BoundaryRegion back(const GridPtr& g, const Point& x0, double eps = 0.0);
  static BoundaryRegion neighborhood_of_back(const GridPtr& g, const Point& x0, double margin) {
    return back(g, x0, margin);
  }

  const GridPtr& grid() const { return grid_; }
  const std::string& name() const { return name_; }
  bool contains(std::size_t slot) const { return mask_[slot] != 0; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
  const std::vector<char>& mask() const { return mask_; }
  BoundaryRegion intersect(const BoundaryRegion& o) const;
  BoundaryRegion unite(const BoundaryRegion& o) const;
  bool subset_of(const BoundaryRegion& o) const;
  bool operator==(const BoundaryRegion& o) const { return mask_ == o.mask_; }

 private:
  GridPtr grid_;
  std::vector<char> mask_;
  std::string name_;
};

// Signed (x - x0).nu per boundary slot.
std::vector<double> boundary_dot(const SpaceTimeGrid& g, const Point& x0);

class FluxRecord {
 public:
  FluxRecord() = default;
  FluxRecord(BoundaryField f, BoundaryField flux, std::shared_ptr<const SolveReport> report);

  bool available() const { return available_; }
  const BoundaryField& input() const { return f_; }
  // Whole flux, unmasked. Throws when the solve did not converge.
  const BoundaryField& flux() const;
  const std::shared_ptr<const SolveReport>& report() const { return report_; }
  const std::optional<BoundaryRegion>& region() const { return region_; }
  bool visible(std::size_t slot) const { return !region_ || region_->contains(slot); }
  // Masked read: rejects slots outside the region.
  double at(int k, std::size_t slot) const;

  FluxRecord restricted(const BoundaryRegion& region) const;

 private:
  BoundaryField f_;
  BoundaryField flux_;
  std::shared_ptr<const SolveReport> report_;
  std::optional<BoundaryRegion> region_;
  bool available_ = false;
};

FluxRecord dn_apply(const MatrixCoefficient& a, const Field& rho, const NonlinearityModel& b, const BoundaryField& f,
                    const SolveOptions& opts = {}, const Field* F = nullptr);
FluxRecord dn_apply(const MatrixCoefficient& a, const Field& rho, const SourceModel& src, const BoundaryField& f,
                    const SolveOptions& opts = {});

// One flux record per datum, evaluated in parallel.
std::vector<FluxRecord> dn_apply_ensemble(const MatrixCoefficient& a, const Field& rho, const NonlinearityModel& b,
                                          const std::vector<BoundaryField>& data, const SolveOptions& opts = {},
                                          const Field* F = nullptr, int threads = 1);

FluxRecord restrict_record(const FluxRecord& r, const BoundaryRegion& region);

struct BoundaryClassification {
  BoundaryRegion front;
  BoundaryRegion back;
  BoundaryRegion back_eps;   // back set fattened by eps
  BoundaryRegion tilde;      // observation region, back set fattened by the margin
  double eps = 0.0;
  double eps_geom = 0.0;
  bool stable = false;       // back_eps(y) within tilde for every sampled y near x0
  std::size_t sampled_points = 0;
};

// Back/front geometry for an exterior source point. When margin < 0 the
// observation region uses 2 eps + eps_geom.
BoundaryClassification classify_boundary(const GridPtr& g, const Point& x0, double eps = 0.0, double eps_geom = 0.0,
                                         double margin = -1.0);

struct FluxComparison {
  double sup = 0.0;
  double l2 = 0.0;
  std::size_t nodes = 0;
};

FluxComparison dn_compare(const FluxRecord& r1, const FluxRecord& r2, const BoundaryRegion* region = nullptr);

struct EnsembleSpec {
  int shapes = 4;
  std::vector<double> amplitudes{0.25, 0.5, 1.0};
  double width = 0.25;   // spatial Gaussian width
  std::uint64_t seed = 20240601;
};

// shapes x amplitudes boundary data in the compatibility class: each vanishes
// to second order at t = 0.
std::vector<BoundaryField> bump_ensemble(const GridPtr& g, const EnsembleSpec& spec = {});

// "level,slot,value,in_region"
void write_flux_csv(const FluxRecord& r, const std::string& path);
// "ensemble_id,norm,value,resolution"
std::string comparison_csv_header();
std::string comparison_csv_rows(int ensemble_id, const FluxComparison& c, double resolution);

}  // namespace ibvp
