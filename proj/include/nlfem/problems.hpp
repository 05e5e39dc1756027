#pragma once

#include <functional>
#include <string>
#include <string_view>

#include "nlfem/geometry_mesh.hpp"

namespace nlfem {

/// Local exact solution u0 with source b = -Laplacian(u0) and volume
/// constraint data g = u0 on the interaction layer.
struct ManufacturedCase {
  std::string name;
  int dimension = 1;
  std::function<double(const Coord&)> u;
  std::function<double(const Coord&)> b;
  std::function<Coord(const Coord&)> grad;

  double g(const Coord& x) const { return u(x); }
};

/// u0 = sin(2 pi x), b = 4 pi^2 sin(2 pi x).
ManufacturedCase case_sin_1d();

/// u0 = x, b = 0 (patch test).
ManufacturedCase case_linear_1d();

/// u0 = sin(2 pi x1) sin(2 pi x2), b = 8 pi^2 u0.
ManufacturedCase case_sin_2d();

/// "sin1d" | "linear1d" | "sin2d"; PreconditionError otherwise.
ManufacturedCase case_by_name(std::string_view name);

}  // namespace nlfem
