#pragma once

#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "nlfem/fem_assembly.hpp"
#include "nlfem/problems.hpp"

namespace nlfem {

struct ErrorRecord {
  double h = 0.0;
  double delta = 0.0;
  int m = 0;
  int dofs = 0;
  double l2 = 0.0;
  double h1 = 0.0;
  double assembly_ms = 0.0;
  double solve_ms = 0.0;
};

/// ||u^h - u0||_{L2(Omega)} by an n_gs^d-point Gauss rule on every Omega element.
double l2_error(const FEField& field, const ManufacturedCase& exact, int n_gs = 8);

/// Full H1(Omega) norm of u^h - u0 (L2 part plus gradient part).
double h1_error(const FEField& field, const ManufacturedCase& exact, int n_gs = 8);

/// |u^h|^2_{H1} over the whole mesh (exact: gradients are per-element constants).
double h1_seminorm_squared(const FEField& field);

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double residual = 0.0;  ///< RMS of the log-space residuals
  int points = 0;
};

/// Least-squares fit of ln(error) = slope ln(h) + intercept. Needs >= 2
/// points; non-positive errors yield NaN slope and residual.
RateFit fit_rate(const std::vector<double>& h, const std::vector<double>& error);

/// Fit over all points plus, when the full fit's residual exceeds 0.1 and at
/// least four points exist, a refit without the coarsest h.
struct GuardedRate {
  RateFit all;
  std::optional<RateFit> without_coarsest;

  const RateFit& preferred() const { return without_coarsest ? *without_coarsest : all; }
};

GuardedRate fit_rate_guarded(const std::vector<double>& h, const std::vector<double>& error);

struct ConvergenceReport {
  std::vector<ErrorRecord> records;
  GuardedRate l2_rate;
  GuardedRate h1_rate;
};

/// Sorts records by decreasing h and fits both rates. Requires >= 3 records.
ConvergenceReport make_report(std::vector<ErrorRecord> records);

/// CSV table `h,delta,m,dofs,l2,h1,assembly_ms,solve_ms` followed by `#`
/// comment lines carrying the fitted slopes.
void write_report_csv(const ConvergenceReport& report, std::ostream& out);

struct ProfileBin {
  double lower = 0.0;
  double upper = 0.0;
  double max_error = 0.0;
  int count = 0;
};

/// Max nodal |u^h - u0| over interior nodes, bucketed into `bins` equal
/// slices of distance to the boundary of Omega.
std::vector<ProfileBin> boundary_error_profile(const FEField& field, const ManufacturedCase& exact,
                                               int bins);

/// Max nodal error within `width` of the boundary divided by the max nodal
/// error farther away (interior nodes only).
double boundary_concentration_ratio(const FEField& field, const ManufacturedCase& exact,
                                    double width);

/// Matrix of the continuous bilinear form D(psi_j, psi_i) over all nodes of
/// a 1D mesh, with the inner integral done in closed form per element and
/// the outer integral by Gauss rules on the pieces of every element cut at
/// node +- delta. With `omega_only` the outer integral runs over Omega
/// elements only.
Eigen::MatrixXd exact_bilinear_matrix_1d(const Mesh& mesh, const Kernel& kernel,
                                         bool omega_only = false, int gauss_points = 20);

/// |D(v, w) - D^h(v, w)| for nodal vectors over all mesh nodes (1D only).
/// D^h uses the production assembly with the given parameters; `omega_only`
/// restricts the outer integral of both forms to Omega elements.
double strang_gap(const Eigen::VectorXd& v, const Eigen::VectorXd& w, const Kernel& kernel,
                  const Mesh& mesh, const InnerGridSpec& spec, double t_e, int n_q,
                  bool omega_only = false);

/// sup over w in V0^h of |D(v, w) - D^h(v, w)| / D(w, w)^{1/2} (1D only).
/// `v` holds either the interior coefficients of a function in V0^h or the
/// values at every node (a function in g^h + V0^h).
double strang_gap_dual_norm(const Eigen::VectorXd& v, const Kernel& kernel, const Mesh& mesh,
                            const InnerGridSpec& spec, double t_e, int n_q);

}  // namespace nlfem
