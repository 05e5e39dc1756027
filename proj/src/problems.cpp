#include "nlfem/problems.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "nlfem/errors.hpp"

namespace nlfem {

namespace {
constexpr double two_pi = 2.0 * std::numbers::pi;
}  // namespace

ManufacturedCase case_sin_1d() {
  ManufacturedCase c;
  c.name = "sin1d";
  c.dimension = 1;
  c.u = [](const Coord& x) { return std::sin(two_pi * x[0]); };
  c.b = [](const Coord& x) { return two_pi * two_pi * std::sin(two_pi * x[0]); };
  c.grad = [](const Coord& x) { return Coord{two_pi * std::cos(two_pi * x[0]), 0.0}; };
  return c;
}

ManufacturedCase case_linear_1d() {
  ManufacturedCase c;
  c.name = "linear1d";
  c.dimension = 1;
  c.u = [](const Coord& x) { return x[0]; };
  c.b = [](const Coord&) { return 0.0; };
  c.grad = [](const Coord&) { return Coord{1.0, 0.0}; };
  return c;
}

ManufacturedCase case_sin_2d() {
  ManufacturedCase c;
  c.name = "sin2d";
  c.dimension = 2;
  c.u = [](const Coord& x) { return std::sin(two_pi * x[0]) * std::sin(two_pi * x[1]); };
  c.b = [](const Coord& x) {
    return 2.0 * two_pi * two_pi * std::sin(two_pi * x[0]) * std::sin(two_pi * x[1]);
  };
  c.grad = [](const Coord& x) {
    return Coord{two_pi * std::cos(two_pi * x[0]) * std::sin(two_pi * x[1]),
                 two_pi * std::sin(two_pi * x[0]) * std::cos(two_pi * x[1])};
  };
  return c;
}

ManufacturedCase case_by_name(std::string_view name) {
  if (name == "sin1d") return case_sin_1d();
  if (name == "linear1d") return case_linear_1d();
  if (name == "sin2d") return case_sin_2d();
  throw PreconditionError(Stage::config,
                          fmt::format("unknown case '{}' (expected sin1d, linear1d or sin2d)", name));
}

}  // namespace nlfem
