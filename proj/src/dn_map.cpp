#include "ibvp/dn_map.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "ibvp/error.hpp"
#include "ibvp/parallel.hpp"

namespace ibvp {

namespace {
constexpr const char* kMod = "dn_map";
constexpr double kTangency = 1e-12;
}  // namespace

BoundaryRegion::BoundaryRegion(GridPtr grid, std::vector<char> mask, std::string name)
    : grid_(std::move(grid)), mask_(std::move(mask)), name_(std::move(name)) {
  require(grid_ && mask_.size() == grid_->boundary_size(), kMod, ErrorKind::Input, "region mask size mismatch");
}

BoundaryRegion BoundaryRegion::full(const GridPtr& g) {
  return BoundaryRegion(g, std::vector<char>(g->boundary_size(), 1), "full");
}

std::vector<double> boundary_dot(const SpaceTimeGrid& g, const Point& x0) {
  std::vector<double> d(g.boundary_size());
  for (std::size_t b = 0; b < g.boundary_size(); ++b) {
    const Point x = g.x(g.boundary_nodes()[b]);
    const Point nu = g.normal(b);
    double s = 0.0;
    for (int i = 0; i < g.dim(); ++i) s += (x[i] - x0[i]) * nu[i];
    d[b] = s;
  }
  return d;
}

BoundaryRegion BoundaryRegion::front(const GridPtr& g, const Point& x0) {
  auto d = boundary_dot(*g, x0);
  std::vector<char> m(d.size());
  for (std::size_t b = 0; b < d.size(); ++b) m[b] = d[b] >= -kTangency;
  return BoundaryRegion(g, std::move(m), "front");
}

BoundaryRegion BoundaryRegion::back(const GridPtr& g, const Point& x0, double eps) {
  auto d = boundary_dot(*g, x0);
  std::vector<char> m(d.size());
  for (std::size_t b = 0; b < d.size(); ++b) m[b] = d[b] <= eps + kTangency;
  return BoundaryRegion(g, std::move(m), eps == 0.0 ? "back" : "back_eps");
}

std::size_t BoundaryRegion::count() const {
  std::size_t c = 0;
  for (char v : mask_) c += v != 0;
  return c;
}

BoundaryRegion BoundaryRegion::intersect(const BoundaryRegion& o) const {
  require_same_grid(grid_, o.grid_, "BoundaryRegion::intersect");
  std::vector<char> m(mask_.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = mask_[i] && o.mask_[i];
  return BoundaryRegion(grid_, std::move(m), name_ + "&" + o.name_);
}

BoundaryRegion BoundaryRegion::unite(const BoundaryRegion& o) const {
  require_same_grid(grid_, o.grid_, "BoundaryRegion::unite");
  std::vector<char> m(mask_.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = mask_[i] || o.mask_[i];
  return BoundaryRegion(grid_, std::move(m), name_ + "|" + o.name_);
}

bool BoundaryRegion::subset_of(const BoundaryRegion& o) const {
  for (std::size_t i = 0; i < mask_.size(); ++i)
    if (mask_[i] && !o.mask_[i]) return false;
  return true;
}

// ---------------------------------------------------------------- records

FluxRecord::FluxRecord(BoundaryField f, BoundaryField flux, std::shared_ptr<const SolveReport> report)
    : f_(std::move(f)), flux_(std::move(flux)), report_(std::move(report)) {
  available_ = !report_ || report_->converged;
}

const BoundaryField& FluxRecord::flux() const {
  require(available_, kMod, ErrorKind::Solver, "flux unavailable: solve did not converge");
  return flux_;
}

double FluxRecord::at(int k, std::size_t slot) const {
  require(visible(slot), kMod, ErrorKind::Geometry, "query outside the observation region");
  return flux().at(k, slot);
}

FluxRecord FluxRecord::restricted(const BoundaryRegion& region) const {
  require(!region.empty(), kMod, ErrorKind::Geometry, "empty region");
  require_same_grid(f_.grid(), region.grid(), "restrict");
  FluxRecord r = *this;
  r.region_ = region_ ? region_->intersect(region) : region;
  require(!r.region_->empty(), kMod, ErrorKind::Geometry, "restriction leaves no nodes");
  return r;
}

FluxRecord restrict_record(const FluxRecord& r, const BoundaryRegion& region) { return r.restricted(region); }

FluxRecord dn_apply(const MatrixCoefficient& a, const Field& rho, const NonlinearityModel& b, const BoundaryField& f,
                    const SolveOptions& opts, const Field* F) {
  auto rep = std::make_shared<SolveReport>(solve_ibvp(a, rho, b, f, opts, F));
  BoundaryField flux = rep->converged ? conormal_derivative(rep->u, a) : BoundaryField(f.grid(), 0.0);
  return FluxRecord(f, std::move(flux), rep);
}

FluxRecord dn_apply(const MatrixCoefficient& a, const Field& rho, const SourceModel& src, const BoundaryField& f,
                    const SolveOptions& opts) {
  return dn_apply(a, rho, src.d, f, opts, &src.F);
}

std::vector<FluxRecord> dn_apply_ensemble(const MatrixCoefficient& a, const Field& rho, const NonlinearityModel& b,
                                          const std::vector<BoundaryField>& data, const SolveOptions& opts,
                                          const Field* F, int threads) {
  std::vector<FluxRecord> out(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) { out[i] = dn_apply(a, rho, b, data[i], opts, F); });
  return out;
}

// ---------------------------------------------------------------- geometry

BoundaryClassification classify_boundary(const GridPtr& g, const Point& x0, double eps, double eps_geom,
                                         double margin) {
  require(eps >= 0.0 && eps_geom >= 0.0, kMod, ErrorKind::Input, "eps must be nonnegative");
  const auto& spec = g->spec();
  bool inside = true;
  for (int i = 0; i < g->dim(); ++i) inside = inside && x0[i] >= spec.lo[i] && x0[i] <= spec.hi[i];
  require(!inside, kMod, ErrorKind::Geometry, "source point lies in the closed domain");
  if (margin < 0.0) margin = 2.0 * eps + eps_geom;

  BoundaryClassification c;
  c.front = BoundaryRegion::front(g, x0);
  c.back = BoundaryRegion::back(g, x0, 0.0);
  c.back_eps = BoundaryRegion::back(g, x0, eps);
  c.tilde = BoundaryRegion::back(g, x0, margin);
  c.tilde = BoundaryRegion(g, c.tilde.mask(), "tilde");
  c.eps = eps;
  c.eps_geom = eps_geom;

  // perturbations of x0 along axes and toward cube corners, just inside radius eps_geom
  std::vector<Point> ys{x0};
  const int n = g->dim();
  const double r = 0.999 * eps_geom;
  if (r > 0.0) {
    for (int i = 0; i < n; ++i)
      for (double s : {-1.0, 1.0}) {
        Point y = x0;
        y[i] += s * r;
        ys.push_back(y);
      }
    for (int mask = 0; mask < (1 << n); ++mask) {
      Point y = x0;
      for (int i = 0; i < n; ++i) y[i] += ((mask >> i) & 1 ? 1.0 : -1.0) * r / std::sqrt(double(n));
      ys.push_back(y);
    }
  }
  c.stable = true;
  for (const Point& y : ys) c.stable = c.stable && BoundaryRegion::back(g, y, eps).subset_of(c.tilde);
  c.sampled_points = ys.size();
  return c;
}

// ---------------------------------------------------------------- comparison

FluxComparison dn_compare(const FluxRecord& r1, const FluxRecord& r2, const BoundaryRegion* region) {
  const auto& f1 = r1.input();
  const auto& f2 = r2.input();
  require_same_grid(f1.grid(), f2.grid(), "dn_compare");
  const double scale = std::max(1.0, std::max(sup_norm(f1), sup_norm(f2)));
  require(sup_norm(f1 - f2) <= 1e-14 * scale, kMod, ErrorKind::Input, "flux records have different inputs");
  const auto& g = *f1.grid();
  const BoundaryField& a = r1.flux();
  const BoundaryField& b = r2.flux();
  const auto& wt = g.time_weights();
  const auto& ws = g.sigma_weights();
  FluxComparison c;
  double acc = 0.0;
  for (std::size_t s = 0; s < g.boundary_size(); ++s) {
    if (!r1.visible(s) || !r2.visible(s) || (region && !region->contains(s))) continue;
    ++c.nodes;
    for (int k = 0; k < g.nt(); ++k) {
      const double d = a.at(k, s) - b.at(k, s);
      c.sup = std::max(c.sup, std::abs(d));
      acc += wt[k] * ws[s] * d * d;
    }
  }
  require(c.nodes > 0, kMod, ErrorKind::Geometry, "no common observation nodes");
  c.l2 = std::sqrt(acc);
  return c;
}

// ---------------------------------------------------------------- ensembles

std::vector<BoundaryField> bump_ensemble(const GridPtr& g, const EnsembleSpec& spec) {
  require(spec.shapes > 0 && !spec.amplitudes.empty(), kMod, ErrorKind::Config, "empty ensemble");
  std::mt19937_64 rng(spec.seed);
  std::uniform_int_distribution<std::size_t> pick(0, g->boundary_size() - 1);
  std::uniform_real_distribution<double> freq(0.5, 1.5);
  const double pi = std::acos(-1.0);
  std::vector<BoundaryField> out;
  for (int s = 0; s < spec.shapes; ++s) {
    const Point c = g->x(g->boundary_nodes()[pick(rng)]);
    const double w = freq(rng);
    BoundaryField shape = sample_boundary(g, [&](double t, const Point& x) {
      double r2 = 0.0;
      for (int i = 0; i < g->dim(); ++i) r2 += (x[i] - c[i]) * (x[i] - c[i]);
      const double tp = std::sin(0.5 * pi * w * t / g->T());
      return tp * tp * std::exp(-r2 / (spec.width * spec.width));
    });
    for (double amp : spec.amplitudes) out.push_back(amp * shape);
  }
  return out;
}

void write_flux_csv(const FluxRecord& r, const std::string& path) {
  std::ofstream os(path);
  require(os.good(), kMod, ErrorKind::Input, "cannot write " + path);
  const BoundaryField& fl = r.flux();
  const auto& g = *fl.grid();
  os << "level,slot,value,in_region\n" << std::setprecision(17);
  for (int k = 0; k < g.nt(); ++k)
    for (std::size_t s = 0; s < g.boundary_size(); ++s)
      os << k << ',' << s << ',' << fl.at(k, s) << ',' << (r.visible(s) ? 1 : 0) << '\n';
}

std::string comparison_csv_header() { return "ensemble_id,norm,value,resolution\n"; }

std::string comparison_csv_rows(int ensemble_id, const FluxComparison& c, double resolution) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << ensemble_id << ",sup," << c.sup << ',' << resolution << '\n';
  os << ensemble_id << ",l2," << c.l2 << ',' << resolution << '\n';
  return os.str();
}

}  // namespace ibvp
