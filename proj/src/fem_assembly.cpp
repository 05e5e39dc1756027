#include "nlfem/fem_assembly.hpp"

#include <cmath>
#include <ostream>
#include <thread>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include "nlfem/errors.hpp"
#include "nlfem/gauss.hpp"

namespace nlfem {

OuterRule outer_rule(const Mesh& mesh, int element, int num_points) {
  if (num_points < 1) throw PreconditionError(Stage::assembly, "outer rule order must be >= 1");
  OuterRule rule;
  if (mesh.dimension() == 1) {
    const auto& g = gauss_legendre01(num_points);
    const auto verts = mesh.element_nodes(element);
    const double x0 = mesh.node(verts[0])[0];
    const double x1 = mesh.node(verts[1])[0];
    const double len = x1 - x0;
    for (int i = 0; i < num_points; ++i) {
      const double s = g.nodes[i];
      rule.points.push_back({x0 + len * s, 0.0});
      rule.barycentric.push_back({1.0 - s, s, 0.0});
      rule.weights.push_back(len * g.weights[i]);
    }
    return rule;
  }
  const int n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(num_points))));
  if (n * n != num_points) {
    throw PreconditionError(
        Stage::assembly,
        fmt::format("2D outer rule needs a square point count (n x n), got {}", num_points));
  }
  const auto& g = gauss_legendre01(n);
  const double area2 = 2.0 * mesh.element_measure(element);
  // Collapse the unit square onto the triangle with the apex at vertex 0:
  // (u, v) -> barycentric (1-u, u(1-v), uv), Jacobian 2|T| u.
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double u = g.nodes[i];
      const double v = g.nodes[j];
      const std::array<double, 3> bary{1.0 - u, u * (1.0 - v), u * v};
      rule.barycentric.push_back(bary);
      rule.points.push_back(mesh.map_to_physical(element, bary));
      rule.weights.push_back(g.weights[i] * g.weights[j] * u * area2);
    }
  }
  return rule;
}

namespace {

struct Triplets {
  std::vector<Eigen::Triplet<double>> a;
  std::vector<Eigen::Triplet<double>> a_ic;
  std::vector<Eigen::Triplet<double>> full;
  AssemblyStats stats;
};

// Per-thread scratch: dense element matrix over the nodes touched by the
// element's inner points, indexed through a node -> slot stamp array.
class ElementAccumulator {
 public:
  explicit ElementAccumulator(int num_nodes) : slot_(num_nodes, -1) {}

  int slot(int node) {
    int& s = slot_[node];
    if (s >= 0) return s;
    if (touched_.size() == cap_) grow();
    s = static_cast<int>(touched_.size());
    touched_.push_back(node);
    return s;
  }

  double& at(int a, int b) { return local_[static_cast<std::size_t>(a) * cap_ + b]; }

  const std::vector<int>& touched() const { return touched_; }

  void clear() {
    for (std::size_t a = 0; a < touched_.size(); ++a) {
      slot_[touched_[a]] = -1;
      std::fill_n(local_.begin() + static_cast<std::ptrdiff_t>(a * cap_), touched_.size(), 0.0);
    }
    touched_.clear();
  }

 private:
  void grow() {
    const std::size_t cap = std::max<std::size_t>(16, 2 * cap_);
    std::vector<double> next(cap * cap, 0.0);
    for (std::size_t a = 0; a < touched_.size(); ++a) {
      for (std::size_t b = 0; b < touched_.size(); ++b) next[a * cap + b] = local_[a * cap_ + b];
    }
    local_.swap(next);
    cap_ = cap;
  }

  std::vector<int> slot_;
  std::vector<int> touched_;
  std::vector<double> local_;
  std::size_t cap_ = 0;
};

void assemble_range(const Mesh& mesh, InnerRuleCache& cache, const AssemblyParams& params,
                    int first, int last, Triplets& out) {
  const BoxDomain& box = mesh.domain();
  const int j_omega = mesh.num_interior();
  const auto& offsets = cache.ball_offsets().offsets;
  ElementAccumulator acc(mesh.num_nodes());

  std::array<int, 6> nodes{};
  std::array<double, 6> diff{};
  std::array<int, 6> slots{};

  for (int e = first; e < last; ++e) {
    if (params.outer_omega_only && mesh.element_layer(e) != Layer::omega) continue;
    const OuterRule rule = outer_rule(mesh, e, params.n_q);
    const auto verts = mesh.element_nodes(e);
    const int nv = static_cast<int>(verts.size());
    for (std::size_t q = 0; q < rule.points.size(); ++q) {
      const Coord& xq = rule.points[q];
      const MaskedWeights& inner = cache.rule_for_center(xq, box, params.t_e);
      ++out.stats.outer_points;
      for (std::size_t k = 0; k < inner.offset_index.size(); ++k) {
        const Coord& o = offsets[inner.offset_index[k]];
        const Coord y{xq[0] + o[0], xq[1] + o[1]};
        if (!box.contains(y, box.delta)) {
          ++out.stats.dropped_points;
          continue;
        }
        const auto loc = mesh.locate(y);
        if (!loc) {
          throw NumericalError(Stage::assembly,
                               fmt::format("inner point ({}, {}) of element {} could not be "
                                           "located in the mesh",
                                           y[0], y[1], e));
        }
        ++out.stats.inner_points;
        // psi(y) - psi(x_q) over the union of both elements' vertices.
        int count = 0;
        const auto yverts = mesh.element_nodes(loc->element);
        for (int v = 0; v < nv; ++v) {
          nodes[count] = yverts[v];
          diff[count++] = loc->barycentric[v];
        }
        for (int v = 0; v < nv; ++v) {
          int pos = 0;
          while (pos < count && nodes[pos] != verts[v]) ++pos;
          if (pos == count) {
            nodes[count] = verts[v];
            diff[count++] = 0.0;
          }
          diff[pos] -= rule.barycentric[q][v];
        }
        const double c = rule.weights[q] * inner.kernel_weight[k];
        for (int a = 0; a < count; ++a) slots[a] = acc.slot(nodes[a]);
        for (int a = 0; a < count; ++a) {
          const double ca = c * diff[a];
          for (int b = 0; b < count; ++b) {
            // Upper triangle in slot order only; mirrored on output so the
            // assembled matrix is exactly symmetric.
            if (slots[b] >= slots[a]) acc.at(slots[a], slots[b]) += ca * diff[b];
          }
        }
      }
    }

    const auto& touched = acc.touched();
    const int nt = static_cast<int>(touched.size());
    for (int a = 0; a < nt; ++a) {
      for (int b = 0; b < nt; ++b) {
        const double v = a <= b ? acc.at(a, b) : acc.at(b, a);
        const int row = touched[a];
        const int col = touched[b];
        if (params.full_matrix) out.full.emplace_back(row, col, v);
        if (row >= j_omega) continue;
        if (col < j_omega) {
          out.a.emplace_back(row, col, v);
        } else {
          out.a_ic.emplace_back(row, col - j_omega, v);
        }
      }
    }
    acc.clear();
  }
}

}  // namespace

DiscreteSystem assemble_stiffness(const FESpace& space, const Kernel& kernel,
                                  const InnerGridSpec& spec, const AssemblyParams& params) {
  const Mesh& mesh = space.mesh();
  if (kernel.dimension() != mesh.dimension() || spec.dimension != mesh.dimension()) {
    throw PreconditionError(Stage::assembly, "kernel, inner grid and mesh dimensions differ");
  }
  if (kernel.delta() != mesh.domain().delta) {
    throw PreconditionError(Stage::assembly, "kernel horizon differs from the mesh horizon");
  }
  if (!(params.t_e >= 0.0 && params.t_e <= kernel.delta())) {
    throw PreconditionError(Stage::assembly,
                            fmt::format("t_e = {} outside [0, delta]", params.t_e));
  }
  if (params.n_q < 1 || params.n_b < 1) {
    throw PreconditionError(Stage::assembly, "outer quadrature counts must be positive");
  }

  InnerRuleCache cache(kernel, spec);
  const int ne = mesh.num_elements();
  const int nthreads = std::clamp(params.threads, 1, std::max(1, ne));
  std::vector<Triplets> parts(nthreads);
  if (nthreads == 1) {
    assemble_range(mesh, cache, params, 0, ne, parts[0]);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(nthreads);
    for (int t = 0; t < nthreads; ++t) {
      const int first = static_cast<int>(static_cast<long long>(ne) * t / nthreads);
      const int last = static_cast<int>(static_cast<long long>(ne) * (t + 1) / nthreads);
      pool.emplace_back([&, t, first, last] {
        try {
          assemble_range(mesh, cache, params, first, last, parts[t]);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& err : errors) {
      if (err) std::rethrow_exception(err);
    }
  }

  // Concatenate in thread order = element order so duplicate summation in
  // setFromTriplets is independent of the thread count.
  Triplets all;
  for (auto& p : parts) {
    all.a.insert(all.a.end(), p.a.begin(), p.a.end());
    all.a_ic.insert(all.a_ic.end(), p.a_ic.begin(), p.a_ic.end());
    all.full.insert(all.full.end(), p.full.begin(), p.full.end());
    all.stats.outer_points += p.stats.outer_points;
    all.stats.inner_points += p.stats.inner_points;
    all.stats.dropped_points += p.stats.dropped_points;
  }

  const int j_omega = mesh.num_interior();
  DiscreteSystem sys;
  sys.A.resize(j_omega, j_omega);
  sys.A.setFromTriplets(all.a.begin(), all.a.end());
  sys.A_ic.resize(j_omega, mesh.num_constraint());
  sys.A_ic.setFromTriplets(all.a_ic.begin(), all.a_ic.end());
  if (params.full_matrix) {
    sys.A_full.resize(mesh.num_nodes(), mesh.num_nodes());
    sys.A_full.setFromTriplets(all.full.begin(), all.full.end());
  }
  sys.stats = all.stats;
  sys.stats.cache = cache.stats();
  sys.f = Eigen::VectorXd::Zero(j_omega);
  return sys;
}

void assemble_rhs(const FESpace& space, DiscreteSystem& system, const AssemblyParams& params,
                  const ScalarField& b, const ScalarField& g) {
  const Mesh& mesh = space.mesh();
  const int j_omega = mesh.num_interior();
  Eigen::VectorXd f = Eigen::VectorXd::Zero(j_omega);
  for (int e = 0; e < mesh.num_elements(); ++e) {
    if (mesh.element_layer(e) != Layer::omega) continue;
    const OuterRule rule = outer_rule(mesh, e, params.n_b);
    const auto verts = mesh.element_nodes(e);
    for (std::size_t q = 0; q < rule.points.size(); ++q) {
      const double bw = b(rule.points[q]) * rule.weights[q];
      for (std::size_t v = 0; v < verts.size(); ++v) {
        if (verts[v] < j_omega) f[verts[v]] += rule.barycentric[q][v] * bw;
      }
    }
  }
  system.g_values.resize(mesh.num_constraint());
  for (int j = 0; j < mesh.num_constraint(); ++j) system.g_values[j] = g(mesh.node(j_omega + j));
  f -= system.A_ic * system.g_values;
  if (!f.allFinite()) throw NumericalError(Stage::assembly, "load vector is not finite");
  system.f = std::move(f);
}

DiscreteSystem assemble_system(const FESpace& space, const Kernel& kernel,
                               const InnerGridSpec& spec, const AssemblyParams& params,
                               const ScalarField& b, const ScalarField& g) {
  DiscreteSystem sys = assemble_stiffness(space, kernel, spec, params);
  assemble_rhs(space, sys, params, b, g);
  return sys;
}

SolveResult solve_system(const DiscreteSystem& system) {
  constexpr double tolerance = 1e-12;
  const SparseMatrix& a = system.A;
  const Eigen::VectorXd& f = system.f;
  if (a.rows() != f.size() || a.rows() != a.cols()) {
    throw PreconditionError(Stage::solve, "system dimensions are inconsistent");
  }
  SolveResult out;
  const double fnorm = f.norm();
  if (fnorm == 0.0) {
    out.u = Eigen::VectorXd::Zero(f.size());
    return out;
  }
  auto rel = [&](const Eigen::VectorXd& u) { return (f - a * u).norm() / fnorm; };

  Eigen::SimplicialLDLT<SparseMatrix> ldlt(a);
  bool direct_ok = ldlt.info() == Eigen::Success;
  if (direct_ok) {
    const Eigen::VectorXd d = ldlt.vectorD();
    direct_ok = (d.array() > 0.0).all();
  }
  if (direct_ok) {
    out.u = ldlt.solve(f);
    out.relative_residual = rel(out.u);
    while (out.relative_residual > tolerance && out.refinement_steps < 3) {
      out.u += ldlt.solve(f - a * out.u);
      out.relative_residual = rel(out.u);
      ++out.refinement_steps;
    }
    if (out.relative_residual <= tolerance) return out;
  }

  Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper,
                           Eigen::DiagonalPreconditioner<double>>
      cg(a);
  cg.setTolerance(tolerance * 1e-2);
  cg.setMaxIterations(static_cast<Eigen::Index>(std::max<Eigen::Index>(1000, 20 * a.rows())));
  out.u = direct_ok ? Eigen::VectorXd(cg.solveWithGuess(f, out.u)) : Eigen::VectorXd(cg.solve(f));
  out.used_cg = true;
  out.cg_iterations = static_cast<int>(cg.iterations());
  out.relative_residual = rel(out.u);
  if (!(out.relative_residual <= tolerance)) {
    throw NumericalError(
        Stage::solve,
        fmt::format("linear solve failed: direct factorization {}, CG {} iterations, "
                    "relative residual {:.3e} > {:.0e}",
                    direct_ok ? "inaccurate" : "not positive definite", out.cg_iterations,
                    out.relative_residual, tolerance));
  }
  return out;
}

FEField::FEField(const Mesh& mesh, Eigen::VectorXd nodal) : mesh_(&mesh), nodal_(std::move(nodal)) {
  if (nodal_.size() != mesh.num_nodes()) {
    throw PreconditionError(Stage::error, "nodal vector size differs from the node count");
  }
}

double FEField::value(int element, const std::array<double, 3>& bary) const {
  const auto verts = mesh_->element_nodes(element);
  double s = 0.0;
  for (std::size_t v = 0; v < verts.size(); ++v) s += bary[v] * nodal_[verts[v]];
  return s;
}

double FEField::evaluate(const Coord& x) const {
  const auto loc = mesh_->locate(x);
  if (!loc) {
    throw PreconditionError(Stage::error,
                            fmt::format("evaluation point ({}, {}) is outside the mesh", x[0], x[1]));
  }
  return value(loc->element, loc->barycentric);
}

Coord FEField::gradient(int element) const {
  const auto verts = mesh_->element_nodes(element);
  const auto grads = mesh_->basis_gradients(element);
  Coord g{0.0, 0.0};
  for (std::size_t v = 0; v < verts.size(); ++v) {
    g[0] += grads[v][0] * nodal_[verts[v]];
    g[1] += grads[v][1] * nodal_[verts[v]];
  }
  return g;
}

FEField reconstruct(const FESpace& space, const Eigen::VectorXd& interior, const ScalarField& g) {
  const Mesh& mesh = space.mesh();
  if (interior.size() != mesh.num_interior()) {
    throw PreconditionError(Stage::solve, "coefficient vector size differs from J_Omega");
  }
  Eigen::VectorXd nodal(mesh.num_nodes());
  nodal.head(mesh.num_interior()) = interior;
  for (int j = mesh.num_interior(); j < mesh.num_nodes(); ++j) nodal[j] = g(mesh.node(j));
  return FEField(mesh, std::move(nodal));
}

FEField interpolate(const Mesh& mesh, const ScalarField& u) {
  Eigen::VectorXd nodal(mesh.num_nodes());
  for (int j = 0; j < mesh.num_nodes(); ++j) nodal[j] = u(mesh.node(j));
  return FEField(mesh, std::move(nodal));
}

void write_matrix_market(const SparseMatrix& matrix, std::ostream& out) {
  out << "%%MatrixMarket matrix coordinate real general\n";
  fmt::print(out, "{} {} {}\n", matrix.rows(), matrix.cols(), matrix.nonZeros());
  for (Eigen::Index c = 0; c < matrix.outerSize(); ++c) {
    for (SparseMatrix::InnerIterator it(matrix, c); it; ++it) {
      fmt::print(out, "{} {} {:.17g}\n", it.row() + 1, it.col() + 1, it.value());
    }
  }
}

void write_solution_csv(const FEField& field, std::ostream& out) {
  const Mesh& mesh = field.mesh();
  const bool two_d = mesh.dimension() == 2;
  out << (two_d ? "node,x,y,u\n" : "node,x,u\n");
  for (int j = 0; j < mesh.num_nodes(); ++j) {
    const Coord& x = mesh.node(j);
    if (two_d) {
      fmt::print(out, "{},{:.17g},{:.17g},{:.17g}\n", j, x[0], x[1], field.nodal_values()[j]);
    } else {
      fmt::print(out, "{},{:.17g},{:.17g}\n", j, x[0], field.nodal_values()[j]);
    }
  }
}

}  // namespace nlfem
