#include "nlfem/kernels.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "nlfem/errors.hpp"
#include "nlfem/gauss.hpp"

namespace nlfem {

KernelKind parse_kernel_kind(std::string_view name) {
  if (name == "constant") return KernelKind::constant;
  if (name == "rational") return KernelKind::rational;
  throw PreconditionError(Stage::kernel, fmt::format("unknown kernel kind '{}'", name));
}

std::string_view to_string(KernelKind kind) {
  return kind == KernelKind::constant ? "constant" : "rational";
}

double default_zeta(KernelKind kind, int dimension) {
  using std::numbers::pi;
  if (dimension == 1) return kind == KernelKind::constant ? 1.5 : 1.0;
  if (dimension == 2) return kind == KernelKind::constant ? 4.0 / pi : 3.0 / pi;
  throw PreconditionError(Stage::kernel, fmt::format("unsupported dimension {}", dimension));
}

Kernel::Kernel(KernelKind kind, int dimension, double delta, std::optional<double> zeta,
               BallNorm norm)
    : kind_(kind),
      dimension_(dimension),
      delta_(delta),
      zeta_(zeta.value_or(default_zeta(kind, dimension))),
      norm_(norm) {
  if (!(delta > 0.0)) throw PreconditionError(Stage::kernel, "kernel horizon must be positive");
  if (!(zeta_ > 0.0)) throw PreconditionError(Stage::kernel, "kernel scaling must be positive");
  const int power = kind == KernelKind::constant ? dimension + 2 : dimension + 1;
  scale_ = zeta_ / std::pow(delta, power);
}

double Kernel::evaluate_offset(const Coord& offset) const {
  const double r = ball_norm(offset, dimension_, norm_);
  if (r > delta_) return 0.0;
  if (kind_ == KernelKind::constant) return scale_;
  if (r == 0.0) {
    throw NumericalError(Stage::kernel, "singular evaluation of the rational kernel at y = x");
  }
  return scale_ / r;
}

namespace {

// Max-norm square split into four triangular sectors with the apex at the
// origin; on each the norm equals |t_a| for a single axis a, and a collapsed
// Gauss rule integrates the (at most linear-over-linear) integrand.
std::vector<double> max_ball_moments(const Kernel& kernel) {
  const double delta = kernel.delta();
  const auto& g = gauss_legendre01(24);
  std::vector<double> moments(3, 0.0);
  // Sector: t = s * (delta * sign, delta * (2u - 1)) along axis a, s, u in [0,1].
  for (int axis = 0; axis < 2; ++axis) {
    for (double sign : {-1.0, 1.0}) {
      for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        for (std::size_t j = 0; j < g.nodes.size(); ++j) {
          const double s = g.nodes[i];
          const double u = g.nodes[j];
          Coord t{};
          t[axis] = s * delta * sign;
          t[1 - axis] = s * delta * (2.0 * u - 1.0);
          // Jacobian of (s,u) -> t is s * delta * 2 delta.
          const double w = g.weights[i] * g.weights[j] * s * 2.0 * delta * delta;
          const double gamma = kernel.evaluate_offset(t);
          for (int b = 0; b < 3; ++b) moments[b] += w * gamma * second_moment_monomial(t, 2, b);
        }
      }
    }
  }
  return moments;
}

}  // namespace

std::vector<double> exact_moment_integrals(const Kernel& kernel) {
  using std::numbers::pi;
  const double zeta = kernel.zeta();
  const bool constant = kernel.kind() == KernelKind::constant;
  if (kernel.dimension() == 1) {
    return {constant ? 2.0 * zeta / 3.0 : zeta};
  }
  if (kernel.norm() == BallNorm::max) return max_ball_moments(kernel);
  const double diag = constant ? zeta * pi / 4.0 : zeta * pi / 3.0;
  return {diag, 0.0, diag};
}

}  // namespace nlfem
