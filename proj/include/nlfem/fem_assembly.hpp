#pragma once

#include <functional>
#include <iosfwd>
#include <vector>

#include <Eigen/Sparse>

#include "nlfem/geometry_mesh.hpp"
#include "nlfem/gmls_quadrature.hpp"
#include "nlfem/kernels.hpp"

namespace nlfem {

using ScalarField = std::function<double(const Coord&)>;
using SparseMatrix = Eigen::SparseMatrix<double>;

/// Continuous piecewise-linear nodal basis on a mesh. Degrees of freedom are
/// the interior nodes 0..J_Omega-1; constraint nodes follow.
class FESpace {
 public:
  explicit FESpace(const Mesh& mesh) : mesh_(&mesh) {}

  const Mesh& mesh() const { return *mesh_; }
  int num_dofs() const { return mesh_->num_interior(); }
  int num_nodes() const { return mesh_->num_nodes(); }

 private:
  const Mesh* mesh_;
};

/// Gauss points of one element with their barycentric coordinates.
struct OuterRule {
  std::vector<Coord> points;
  std::vector<std::array<double, 3>> barycentric;
  std::vector<double> weights;
};

/// Gauss-Legendre rule with `num_points` points on an element. In 2D the
/// rule is the collapsed (Duffy) tensor product of an n-point rule, so
/// `num_points` must equal n*n.
OuterRule outer_rule(const Mesh& mesh, int element, int num_points);

struct AssemblyParams {
  int n_q = 40;           ///< outer points per element for the stiffness
  int n_b = 40;           ///< outer points per element for the body force
  double t_e = 0.0;       ///< interaction-domain extension thickness
  int threads = 1;
  bool full_matrix = false;  ///< also build the J x J matrix over all nodes
  bool outer_omega_only = false;  ///< restrict the outer sum to Omega elements (diagnostics)
};

struct AssemblyStats {
  std::uint64_t outer_points = 0;
  std::uint64_t inner_points = 0;
  std::uint64_t dropped_points = 0;  ///< inner points discarded outside Omega u BOmega
  InnerRuleCache::Stats cache;
};

struct DiscreteSystem {
  SparseMatrix A;     ///< J_Omega x J_Omega
  SparseMatrix A_ic;  ///< J_Omega x (J - J_Omega): interior rows, constraint columns
  SparseMatrix A_full;  ///< J x J, only when requested
  Eigen::VectorXd f;
  Eigen::VectorXd g_values;  ///< g at the constraint nodes
  AssemblyStats stats;
};

/// Stiffness matrices of the discrete bilinear form, summing over every
/// element of the mesh.
DiscreteSystem assemble_stiffness(const FESpace& space, const Kernel& kernel,
                                  const InnerGridSpec& spec, const AssemblyParams& params);

/// f_i = sum over Omega elements of psi_i b w_b, minus (A_ic g)_i.
void assemble_rhs(const FESpace& space, DiscreteSystem& system, const AssemblyParams& params,
                  const ScalarField& b, const ScalarField& g);

DiscreteSystem assemble_system(const FESpace& space, const Kernel& kernel,
                               const InnerGridSpec& spec, const AssemblyParams& params,
                               const ScalarField& b, const ScalarField& g);

struct SolveResult {
  Eigen::VectorXd u;
  double relative_residual = 0.0;
  int refinement_steps = 0;
  bool used_cg = false;
  int cg_iterations = 0;
};

/// Solves A u = f to relative residual 1e-12: sparse LDL^T with iterative
/// refinement, then Jacobi-preconditioned CG if that falls short.
SolveResult solve_system(const DiscreteSystem& system);

/// Piecewise-linear field given by its values at every mesh node.
class FEField {
 public:
  FEField(const Mesh& mesh, Eigen::VectorXd nodal);

  const Mesh& mesh() const { return *mesh_; }
  const Eigen::VectorXd& nodal_values() const { return nodal_; }

  double value(int element, const std::array<double, 3>& bary) const;
  /// Throws PreconditionError outside closure(Omega u BOmega).
  double evaluate(const Coord& x) const;
  Coord gradient(int element) const;

 private:
  const Mesh* mesh_;
  Eigen::VectorXd nodal_;
};

/// u^h = w^h + g^h: interior coefficients followed by g at constraint nodes.
FEField reconstruct(const FESpace& space, const Eigen::VectorXd& interior, const ScalarField& g);

/// Nodal interpolant of u on every node.
FEField interpolate(const Mesh& mesh, const ScalarField& u);

void write_matrix_market(const SparseMatrix& matrix, std::ostream& out);

/// Node id, coordinates and value.
void write_solution_csv(const FEField& field, std::ostream& out);

}  // namespace nlfem
