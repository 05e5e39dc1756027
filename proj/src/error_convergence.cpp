#include "nlfem/error_convergence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "nlfem/errors.hpp"
#include "nlfem/gauss.hpp"

namespace nlfem {

namespace {

int gauss_count(const Mesh& mesh, int n_gs) {
  if (n_gs < 1) throw PreconditionError(Stage::error, "N_gs must be positive");
  return mesh.dimension() == 1 ? n_gs : n_gs * n_gs;
}

struct ErrorSums {
  double l2 = 0.0;
  double grad = 0.0;
};

ErrorSums error_sums(const FEField& field, const ManufacturedCase& exact, int n_gs) {
  const Mesh& mesh = field.mesh();
  const int np = gauss_count(mesh, n_gs);
  ErrorSums s;
  for (int e = 0; e < mesh.num_elements(); ++e) {
    if (mesh.element_layer(e) != Layer::omega) continue;
    const OuterRule rule = outer_rule(mesh, e, np);
    const Coord gh = field.gradient(e);
    for (std::size_t q = 0; q < rule.points.size(); ++q) {
      const double diff = field.value(e, rule.barycentric[q]) - exact.u(rule.points[q]);
      const Coord g = exact.grad(rule.points[q]);
      const double gx = gh[0] - g[0];
      const double gy = mesh.dimension() == 2 ? gh[1] - g[1] : 0.0;
      s.l2 += rule.weights[q] * diff * diff;
      s.grad += rule.weights[q] * (gx * gx + gy * gy);
    }
  }
  return s;
}

}  // namespace

double l2_error(const FEField& field, const ManufacturedCase& exact, int n_gs) {
  return std::sqrt(error_sums(field, exact, n_gs).l2);
}

double h1_error(const FEField& field, const ManufacturedCase& exact, int n_gs) {
  const ErrorSums s = error_sums(field, exact, n_gs);
  return std::sqrt(s.l2 + s.grad);
}

double h1_seminorm_squared(const FEField& field) {
  const Mesh& mesh = field.mesh();
  double s = 0.0;
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const Coord g = field.gradient(e);
    s += mesh.element_measure(e) * (g[0] * g[0] + g[1] * g[1]);
  }
  return s;
}

RateFit fit_rate(const std::vector<double>& h, const std::vector<double>& error) {
  if (h.size() != error.size() || h.size() < 2) {
    throw PreconditionError(Stage::error, "rate fit needs at least two (h, error) pairs");
  }
  RateFit fit;
  fit.points = static_cast<int>(h.size());
  const bool usable = std::all_of(error.begin(), error.end(), [](double e) { return e > 0.0; }) &&
                      std::all_of(h.begin(), h.end(), [](double x) { return x > 0.0; });
  if (!usable) {
    fit.slope = fit.intercept = fit.residual = std::numeric_limits<double>::quiet_NaN();
    return fit;
  }
  const double n = static_cast<double>(h.size());
  double mx = 0.0;
  double my = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    mx += std::log(h[i]);
    my += std::log(error[i]);
  }
  mx /= n;
  my /= n;
  double sxx = 0.0;
  double sxy = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double dx = std::log(h[i]) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(error[i]) - my);
  }
  if (sxx == 0.0) throw PreconditionError(Stage::error, "rate fit needs distinct h values");
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double ss = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double r = std::log(error[i]) - (fit.slope * std::log(h[i]) + fit.intercept);
    ss += r * r;
  }
  fit.residual = std::sqrt(ss / n);
  return fit;
}

GuardedRate fit_rate_guarded(const std::vector<double>& h, const std::vector<double>& error) {
  GuardedRate out;
  out.all = fit_rate(h, error);
  if (h.size() >= 4 && out.all.residual > 0.1) {
    const auto coarsest = static_cast<std::size_t>(std::max_element(h.begin(), h.end()) - h.begin());
    std::vector<double> h2;
    std::vector<double> e2;
    for (std::size_t i = 0; i < h.size(); ++i) {
      if (i == coarsest) continue;
      h2.push_back(h[i]);
      e2.push_back(error[i]);
    }
    out.without_coarsest = fit_rate(h2, e2);
  }
  return out;
}

ConvergenceReport make_report(std::vector<ErrorRecord> records) {
  if (records.size() < 3) {
    throw PreconditionError(Stage::error, "a convergence report needs at least three records");
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const ErrorRecord& a, const ErrorRecord& b) { return a.h > b.h; });
  ConvergenceReport report;
  std::vector<double> h;
  std::vector<double> l2;
  std::vector<double> h1;
  for (const auto& r : records) {
    h.push_back(r.h);
    l2.push_back(r.l2);
    h1.push_back(r.h1);
  }
  report.l2_rate = fit_rate_guarded(h, l2);
  report.h1_rate = fit_rate_guarded(h, h1);
  report.records = std::move(records);
  return report;
}

void write_report_csv(const ConvergenceReport& report, std::ostream& out) {
  out << "h,delta,m,dofs,l2,h1,assembly_ms,solve_ms\n";
  for (const auto& r : report.records) {
    fmt::print(out, "{:.17g},{:.17g},{},{},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.h, r.delta, r.m,
               r.dofs, r.l2, r.h1, r.assembly_ms, r.solve_ms);
  }
  auto line = [&out](const char* norm, const char* which, const RateFit& f) {
    fmt::print(out, "# {}_slope_{}={:.17g} residual={:.17g} points={}\n", norm, which, f.slope,
               f.residual, f.points);
  };
  for (const auto& [norm, rate] : {std::pair{"l2", &report.l2_rate}, std::pair{"h1", &report.h1_rate}}) {
    line(norm, "all", rate->all);
    if (rate->without_coarsest) line(norm, "guarded", *rate->without_coarsest);
  }
}

std::vector<ProfileBin> boundary_error_profile(const FEField& field, const ManufacturedCase& exact,
                                               int bins) {
  if (bins < 1) throw PreconditionError(Stage::error, "profile needs at least one bin");
  const Mesh& mesh = field.mesh();
  const BoxDomain& box = mesh.domain();
  double half = 0.5 * (box.upper[0] - box.lower[0]);
  if (box.dimension == 2) half = std::min(half, 0.5 * (box.upper[1] - box.lower[1]));
  std::vector<ProfileBin> out(bins);
  for (int b = 0; b < bins; ++b) {
    out[b].lower = half * b / bins;
    out[b].upper = half * (b + 1) / bins;
  }
  for (int j = 0; j < mesh.num_interior(); ++j) {
    const Coord& x = mesh.node(j);
    const double dist = box.distance_to_boundary(x);
    const int b = std::clamp(static_cast<int>(dist / half * bins), 0, bins - 1);
    const double err = std::abs(field.nodal_values()[j] - exact.u(x));
    out[b].max_error = std::max(out[b].max_error, err);
    ++out[b].count;
  }
  return out;
}

double boundary_concentration_ratio(const FEField& field, const ManufacturedCase& exact,
                                    double width) {
  const Mesh& mesh = field.mesh();
  double near = 0.0;
  double far = 0.0;
  int far_count = 0;
  for (int j = 0; j < mesh.num_interior(); ++j) {
    const Coord& x = mesh.node(j);
    const double err = std::abs(field.nodal_values()[j] - exact.u(x));
    if (mesh.domain().distance_to_boundary(x) <= width) {
      near = std::max(near, err);
    } else {
      far = std::max(far, err);
      ++far_count;
    }
  }
  if (far_count == 0) {
    throw PreconditionError(Stage::error, "no interior nodes beyond the boundary band");
  }
  return far > 0.0 ? near / far : std::numeric_limits<double>::infinity();
}

namespace {

// Integral of t^k * gamma(|t|) over [p, q] with 0 <= k <= 2.
double kernel_moment(const Kernel& kernel, double p, double q, int k) {
  if (q <= p) return 0.0;
  // 1D: gamma = zeta / delta^3 (constant) or zeta / (delta^2 |t|) (rational).
  const double delta = kernel.delta();
  const double scale = kernel.kind() == KernelKind::constant ? kernel.zeta() / (delta * delta * delta)
                                                             : kernel.zeta() / (delta * delta);
  if (kernel.kind() == KernelKind::constant) {
    return scale * (std::pow(q, k + 1) - std::pow(p, k + 1)) / (k + 1);
  }
  // scale / |t|: split at zero so the sign of t is fixed on each piece.
  auto signed_piece = [k](double a, double b) {
    const double s = a >= 0.0 ? 1.0 : -1.0;
    switch (k) {
      case 0: return s * std::log(std::abs(b) / std::abs(a));
      case 1: return s * (b - a);
      default: return s * 0.5 * (b * b - a * a);
    }
  };
  if (p < 0.0 && q > 0.0) {
    if (k == 0) {
      throw NumericalError(Stage::error, "divergent constant term in the rational inner integral");
    }
    return scale * (signed_piece(p, 0.0) + signed_piece(0.0, q));
  }
  return scale * signed_piece(p, q);
}

}  // namespace

Eigen::MatrixXd exact_bilinear_matrix_1d(const Mesh& mesh, const Kernel& kernel, bool omega_only,
                                         int gauss_points) {
  if (mesh.dimension() != 1 || kernel.dimension() != 1) {
    throw PreconditionError(Stage::error, "the exact bilinear form is implemented for 1D only");
  }
  const double delta = kernel.delta();
  const auto xb = mesh.breakpoints(0);
  const double left = xb.front();
  const double right = xb.back();
  const int nn = mesh.num_nodes();
  const auto& g = gauss_legendre01(gauss_points);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(nn, nn);

  for (int e = 0; e < mesh.num_elements(); ++e) {
    if (omega_only && mesh.element_layer(e) != Layer::omega) continue;
    const double xa = xb[e];
    const double xe = xb[e + 1];
    // Cut points where x +- delta crosses a breakpoint.
    std::vector<double> cuts{xa, xe};
    for (double b : xb) {
      for (double c : {b - delta, b + delta}) {
        if (c > xa && c < xe) cuts.push_back(c);
      }
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

    const auto ev = mesh.element_nodes(e);
    for (std::size_t piece = 0; piece + 1 < cuts.size(); ++piece) {
      const double p0 = cuts[piece];
      const double len = cuts[piece + 1] - p0;
      if (len <= 0.0) continue;
      // The rational kernel leaves (x - b)^2 log|x - b| terms at the piece
      // ends, so grade the sub-intervals geometrically toward both ends.
      std::vector<double> sub{0.0, 1.0};
      if (kernel.kind() == KernelKind::rational) {
        for (double s = 0.15; s > 1e-7; s *= 0.15) {
          sub.push_back(s);
          sub.push_back(1.0 - s);
        }
        std::sort(sub.begin(), sub.end());
      }
      for (std::size_t iq = 0; iq < gauss_points * (sub.size() - 1); ++iq) {
        const std::size_t si = iq / static_cast<std::size_t>(gauss_points);
        const std::size_t gi = iq % static_cast<std::size_t>(gauss_points);
        const double sl = len * (sub[si + 1] - sub[si]);
        const double x = p0 + len * sub[si] + sl * g.nodes[gi];
        const double wx = sl * g.weights[gi];
        const double sx = (x - xa) / (xe - xa);
        const double lo = std::max(left, x - delta);
        const double hi = std::min(right, x + delta);
        const int first = std::max(0, static_cast<int>(std::upper_bound(xb.begin(), xb.end(), lo) -
                                                       xb.begin()) - 1);
        for (int f = first; f < mesh.num_elements() && xb[f] < hi; ++f) {
          const double y0 = std::max(lo, xb[f]);
          const double y1 = std::min(hi, xb[f + 1]);
          if (y1 <= y0) continue;
          const double len_f = xb[f + 1] - xb[f];
          const auto fv = mesh.element_nodes(f);
          // Nodes of both elements: alpha + beta t = psi|_f(x + t) - psi(x).
          std::array<int, 4> nodes{};
          std::array<double, 4> alpha{};
          std::array<double, 4> beta{};
          int count = 0;
          auto add = [&](int node, double al, double be) {
            for (int i = 0; i < count; ++i) {
              if (nodes[i] == node) {
                alpha[i] += al;
                beta[i] += be;
                return;
              }
            }
            nodes[count] = node;
            alpha[count] = al;
            beta[count++] = be;
          };
          add(fv[0], (xb[f + 1] - x) / len_f, -1.0 / len_f);
          add(fv[1], (x - xb[f]) / len_f, 1.0 / len_f);
          add(ev[0], -(1.0 - sx), 0.0);
          add(ev[1], -sx, 0.0);
          if (f == e) {
            // Same linear piece: psi|_f(x) - psi(x) vanishes identically.
            for (int i = 0; i < count; ++i) alpha[i] = 0.0;
          }
          const double t0 = y0 - x;
          const double t1 = y1 - x;
          const double m2 = kernel_moment(kernel, t0, t1, 2);
          const double m1 = kernel_moment(kernel, t0, t1, 1);
          const bool has_constant = f != e;
          const double m0 = has_constant ? kernel_moment(kernel, t0, t1, 0) : 0.0;
          for (int i = 0; i < count; ++i) {
            for (int j = 0; j < count; ++j) {
              const double val = alpha[i] * alpha[j] * m0 +
                                 (alpha[i] * beta[j] + alpha[j] * beta[i]) * m1 +
                                 beta[i] * beta[j] * m2;
              a(nodes[i], nodes[j]) += wx * val;
            }
          }
        }
      }
    }
  }
  return a;
}

namespace {

Eigen::MatrixXd discrete_full_matrix(const Kernel& kernel, const Mesh& mesh,
                                     const InnerGridSpec& spec, double t_e, int n_q,
                                     bool omega_only) {
  AssemblyParams params;
  params.n_q = n_q;
  params.n_b = n_q;
  params.t_e = t_e;
  params.full_matrix = true;
  params.outer_omega_only = omega_only;
  const DiscreteSystem sys = assemble_stiffness(FESpace(mesh), kernel, spec, params);
  return Eigen::MatrixXd(sys.A_full);
}

}  // namespace

double strang_gap(const Eigen::VectorXd& v, const Eigen::VectorXd& w, const Kernel& kernel,
                  const Mesh& mesh, const InnerGridSpec& spec, double t_e, int n_q,
                  bool omega_only) {
  if (mesh.dimension() != 1) {
    throw PreconditionError(Stage::error, "strang_gap is only supported in 1D");
  }
  if (v.size() != mesh.num_nodes() || w.size() != mesh.num_nodes()) {
    throw PreconditionError(Stage::error, "strang_gap expects nodal vectors over all nodes");
  }
  const Eigen::MatrixXd exact = exact_bilinear_matrix_1d(mesh, kernel, omega_only);
  const Eigen::MatrixXd discrete = discrete_full_matrix(kernel, mesh, spec, t_e, n_q, omega_only);
  return std::abs(v.dot((exact - discrete) * w));
}

double strang_gap_dual_norm(const Eigen::VectorXd& v, const Kernel& kernel, const Mesh& mesh,
                            const InnerGridSpec& spec, double t_e, int n_q) {
  if (mesh.dimension() != 1) {
    throw PreconditionError(Stage::error, "strang_gap is only supported in 1D");
  }
  const int ni = mesh.num_interior();
  const int nn = mesh.num_nodes();
  if (v.size() != ni && v.size() != nn) {
    throw PreconditionError(Stage::error,
                            "expected interior coefficients or values at every node");
  }
  const Eigen::MatrixXd exact = exact_bilinear_matrix_1d(mesh, kernel);
  const Eigen::MatrixXd discrete = discrete_full_matrix(kernel, mesh, spec, t_e, n_q, false);
  const Eigen::MatrixXd gap = (exact - discrete).topRows(ni);
  const Eigen::VectorXd r = v.size() == nn ? Eigen::VectorXd(gap * v)
                                           : Eigen::VectorXd(gap.leftCols(ni) * v);
  // sup_w |r.w| / sqrt(w' E w) = sqrt(r' E^{-1} r).
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(exact.topLeftCorner(ni, ni));
  if (ldlt.info() != Eigen::Success) {
    throw NumericalError(Stage::error, "exact bilinear form is not positive definite");
  }
  return std::sqrt(std::max(0.0, r.dot(ldlt.solve(r))));
}

}  // namespace nlfem
