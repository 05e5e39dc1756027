#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "nlfem/geometry_mesh.hpp"

namespace nlfem {

enum class KernelKind { constant, rational };

KernelKind parse_kernel_kind(std::string_view name);
std::string_view to_string(KernelKind kind);

/// Scaling for which the second moments of the kernel over the Euclidean
/// ball equal one, so the nonlocal operator tends to the Laplacian.
double default_zeta(KernelKind kind, int dimension);

/// Radial kernel supported on the closed ball of radius delta:
///   constant: zeta / delta^(d+2)
///   rational: zeta / (delta^(d+1) |y - x|)
class Kernel {
 public:
  Kernel(KernelKind kind, int dimension, double delta,
         std::optional<double> zeta = std::nullopt, BallNorm norm = BallNorm::euclidean);

  KernelKind kind() const { return kind_; }
  int dimension() const { return dimension_; }
  double delta() const { return delta_; }
  double zeta() const { return zeta_; }
  BallNorm norm() const { return norm_; }

  double evaluate(const Coord& x, const Coord& y) const {
    return evaluate_offset({y[0] - x[0], y[1] - x[1]});
  }

  /// Kernel value as a function of y - x. Throws NumericalError for the
  /// rational kind at zero offset.
  double evaluate_offset(const Coord& offset) const;

 private:
  KernelKind kind_;
  int dimension_;
  double delta_;
  double zeta_;
  BallNorm norm_;
  double scale_;
};

/// Number of multi-indices beta with |beta| = 2: 1 in 1D, 3 in 2D.
inline int num_second_moments(int dimension) { return dimension == 1 ? 1 : 3; }

/// (y - x)^beta for the |beta| = 2 multi-index `index`, ordered
/// (2,0), (1,1), (0,2) in 2D.
inline double second_moment_monomial(const Coord& t, int dimension, int index) {
  if (dimension == 1) return t[0] * t[0];
  switch (index) {
    case 0: return t[0] * t[0];
    case 1: return t[0] * t[1];
    default: return t[1] * t[1];
  }
}

/// Integrals of gamma(x, y) (y - x)^beta over the full ball, |beta| = 2.
/// Closed forms for Euclidean balls; max-norm balls are integrated
/// numerically on sectors where the norm is a single coordinate.
std::vector<double> exact_moment_integrals(const Kernel& kernel);

}  // namespace nlfem
