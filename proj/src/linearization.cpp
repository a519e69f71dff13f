#include "ibvp/linearization.hpp"

#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ibvp/error.hpp"
#include "ibvp/parallel.hpp"
#include "json.hpp"

namespace ibvp {

namespace {
constexpr const char* kMod = "linearization";

Field derivative_field(const NonlinearityModel& b, const Field& u0, int order) {
  Field out(u0.grid(), 0.0);
  const auto& g = *u0.grid();
  for (int k = 0; k < g.nt(); ++k)
    for (std::size_t s = 0; s < g.spatial_size(); ++s) out.at(k, s) = b.eval(k, s, u0.at(k, s), order);
  return out;
}

void partitions_rec(IndexSet rest, std::vector<IndexSet>& cur, std::vector<std::vector<IndexSet>>& out) {
  if (rest == 0) {
    out.push_back(cur);
    return;
  }
  const IndexSet first = rest & (~rest + 1);
  const IndexSet others = rest & ~first;
  // iterate over all subsets of `others`, including empty
  IndexSet sub = others;
  while (true) {
    cur.push_back(first | sub);
    partitions_rec(others & ~sub, cur, out);
    cur.pop_back();
    if (sub == 0) break;
    sub = (sub - 1) & others;
  }
}
}  // namespace

const char* to_string(Provenance p) {
  return p == Provenance::DirectSolve ? "direct-solve" : "finite-difference";
}

LinearizationStencil LinearizationStencil::make(int order, std::vector<double> steps, StencilType type) {
  require(order >= 1 && order <= 20, kMod, ErrorKind::Config, "stencil order out of range");
  require(static_cast<int>(steps.size()) == order, kMod, ErrorKind::Config, "one step per direction required");
  for (double s : steps) require(s > 0.0 && std::isfinite(s), kMod, ErrorKind::Config, "steps must be positive");
  LinearizationStencil st;
  st.order = order;
  st.steps = std::move(steps);
  st.type = type;
  for (std::uint32_t c = 0; c < (1u << order); ++c) {
    std::vector<double> s(order);
    double w = 1.0;
    for (int i = 0; i < order; ++i) {
      const bool up = (c >> i) & 1u;
      if (type == StencilType::ForwardProduct) {
        s[i] = up ? st.steps[i] : 0.0;
        w *= (up ? 1.0 : -1.0) / st.steps[i];
      } else {
        s[i] = up ? st.steps[i] : -st.steps[i];
        w *= (up ? 1.0 : -1.0) / (2.0 * st.steps[i]);
      }
    }
    st.corners.push_back(std::move(s));
    st.weights.push_back(w);
  }
  return st;
}

const Field& LinearizedSolution::top() const {
  if (order == 1) return v.at(0);
  const IndexSet full = (IndexSet(1) << order) - 1;
  auto it = w.find(full);
  require(it != w.end(), kMod, ErrorKind::Input, "top-order field missing");
  return it->second;
}

std::vector<std::vector<IndexSet>> set_partitions(IndexSet set) {
  std::vector<std::vector<IndexSet>> out;
  std::vector<IndexSet> cur;
  partitions_rec(set, cur, out);
  return out;
}

Field first_linearized(const MatrixCoefficient& a, const Field& rho, const NonlinearityModel& b, const Field& u0,
                       const BoundaryField& h, double theta) {
  require_same_grid(a.grid(), u0.grid(), "first_linearized");
  Field q = derivative_field(b, u0, 1);
  return solve_linear(a, rho, q, nullptr, &h, false, theta);
}

Field faa_di_bruno_rhs(const NonlinearityModel& b, const Field& u0, const std::map<IndexSet, Field>& W, IndexSet set) {
  require(std::popcount(set) >= 2, kMod, ErrorKind::Input, "right-hand side needs order >= 2");
  const auto& g = *u0.grid();
  Field H(u0.grid(), 0.0);
  std::map<int, Field> dcache;
  for (const auto& part : set_partitions(set)) {
    if (part.size() < 2) continue;
    const int j = static_cast<int>(part.size());
    auto dit = dcache.find(j);
    if (dit == dcache.end()) dit = dcache.emplace(j, derivative_field(b, u0, j)).first;
    Field prod = dit->second;
    for (IndexSet blk : part) {
      auto it = W.find(blk);
      require(it != W.end(), kMod, ErrorKind::Input, "missing lower-order solution for an index set");
      require_same_grid(u0.grid(), it->second.grid(), "faa_di_bruno_rhs");
      for (std::size_t i = 0; i < g.size(); ++i) prod[i] *= it->second[i];
    }
    H -= prod;
  }
  return H;
}

LinearizedSolution higher_linearized(const MatrixCoefficient& a, const Field& rho, const NonlinearityModel& b,
                                     const Field& u0, const std::vector<BoundaryField>& h, double theta) {
  const int m1 = static_cast<int>(h.size());
  require(m1 >= 1 && m1 <= 12, kMod, ErrorKind::Config, "order out of range");
  LinearizedSolution out;
  out.order = m1;
  out.provenance = Provenance::DirectSolve;
  LinearPropagator P(a, rho, derivative_field(b, u0, 1), theta);
  std::map<IndexSet, Field> W;
  for (int i = 0; i < m1; ++i) {
    out.v.push_back(P.forward(nullptr, &h[i]));
    W[IndexSet(1) << i] = out.v.back();
  }
  const IndexSet full = (IndexSet(1) << m1) - 1;
  for (int size = 2; size <= m1; ++size)
    for (IndexSet s = 1; s <= full; ++s) {
      if (std::popcount(s) != size) continue;
      Field H = faa_di_bruno_rhs(b, u0, W, s);
      W[s] = P.forward(&H, nullptr);
      out.w[s] = W[s];
      if (s == full) out.H = std::move(H);
    }
  out.flux = P.flux(out.top());
  return out;
}

LinearizedSolution fd_linearized(const MatrixCoefficient& a, const Field& rho, const NonlinearityModel& b,
                                 const BoundaryField& f0, const std::vector<BoundaryField>& h,
                                 const FdOptions& opts) {
  const int m1 = static_cast<int>(h.size());
  require(m1 >= 1 && m1 <= 12, kMod, ErrorKind::Config, "order out of range");
  const double s = opts.s > 0.0 ? opts.s : (opts.type == StencilType::ForwardProduct ? 1e-3 : 1e-2);
  std::vector<double> steps;
  for (const auto& hi : h) {
    const double n = sup_norm(hi);
    require(n > 0.0 || !opts.normalize, kMod, ErrorKind::Input, "zero direction cannot be normalized");
    steps.push_back(opts.normalize ? s / n : s);
  }
  auto st = LinearizationStencil::make(m1, steps, opts.type);
  const std::size_t nc = st.corners.size();
  std::vector<Field> us(nc);
  std::vector<BoundaryField> fl(nc);
  std::vector<char> ok(nc, 0);
  parallel_for(nc, opts.threads, [&](std::size_t c) {
    BoundaryField f = f0;
    for (int i = 0; i < m1; ++i)
      if (st.corners[c][i] != 0.0) f += st.corners[c][i] * h[i];
    SolveReport r = solve_ibvp(a, rho, b, f, opts.solve, opts.F);
    ok[c] = r.converged;
    if (r.converged) {
      fl[c] = conormal_derivative(r.u, a);
      us[c] = std::move(r.u);
    }
  });
  std::ostringstream bad;
  for (std::size_t c = 0; c < nc; ++c)
    if (!ok[c]) {
      bad << " corner " << c << " (s =";
      for (double x : st.corners[c]) bad << ' ' << x;
      bad << ')';
    }
  require(bad.str().empty(), kMod, ErrorKind::Solver, "stencil solves diverged:" + bad.str());

  Field top(f0.grid(), 0.0);
  BoundaryField ftop(f0.grid(), 0.0);
  for (std::size_t c = 0; c < nc; ++c) {
    top += st.weights[c] * us[c];
    ftop += st.weights[c] * fl[c];
  }
  LinearizedSolution out;
  out.order = m1;
  out.provenance = Provenance::FiniteDifference;
  out.steps = steps;
  out.flux = std::move(ftop);
  if (m1 == 1)
    out.v.push_back(std::move(top));
  else
    out.w[(IndexSet(1) << m1) - 1] = std::move(top);
  return out;
}

Field adjoint_solution(const MatrixCoefficient& a, const Field& rho, const Field& q, const Field* F,
                       const BoundaryField* g, double theta) {
  return solve_linear(a, rho, q, F, g, true, theta);
}

void write_linearized(const LinearizedSolution& s, const std::string& dir_s) {
  namespace fs = std::filesystem;
  const fs::path dir(dir_s);
  fs::create_directories(dir);
  nlohmann::json j;
  j["order"] = s.order;
  j["provenance"] = to_string(s.provenance);
  j["steps"] = s.steps;
  nlohmann::json files = nlohmann::json::object();
  for (std::size_t i = 0; i < s.v.size(); ++i) {
    const std::string name = "v" + std::to_string(i + 1) + ".bin";
    write_field_binary(s.v[i], (dir / name).string());
    files[name] = {{"kind", "first"}, {"direction", i + 1}};
  }
  for (const auto& [set, f] : s.w) {
    const std::string name = "w_" + std::to_string(set) + ".bin";
    write_field_binary(f, (dir / name).string());
    files[name] = {{"kind", "mixed"}, {"index_set", set}};
  }
  if (!s.H.empty()) {
    write_field_binary(s.H, (dir / "H.bin").string());
    files["H.bin"] = {{"kind", "rhs"}};
  }
  j["files"] = files;
  std::ofstream os(dir / "manifest.json");
  require(os.good(), kMod, ErrorKind::Input, "cannot write manifest");
  os << j.dump(2) << '\n';
}

}  // namespace ibvp
