#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace nlfem {

/// Point or offset in R^d, d in {1, 2}; unused trailing components are zero.
using Coord = std::array<double, 2>;

/// Norm inducing the interaction ball: euclidean (p=2) or max (p=inf).
enum class BallNorm { euclidean, max };

/// |t| in the given norm, using the first `dimension` components.
double ball_norm(const Coord& t, int dimension, BallNorm norm);

/// Box domain Omega = (lower, upper) with an interaction layer of width
/// `delta` and an optional quadrature extension layer of width `extension`.
struct BoxDomain {
  int dimension = 1;
  Coord lower{0.0, 0.0};
  Coord upper{1.0, 1.0};
  double delta = 0.0;
  double extension = 0.0;

  static BoxDomain unit(int dimension, double delta, double extension = 0.0);

  /// Throws PreconditionError when the box is degenerate, delta <= 0 or the
  /// extension is outside [0, delta].
  void validate() const;

  /// x in the closed box grown by `layer` on every side.
  bool contains(const Coord& x, double layer) const;

  /// Distance from a point of closure(Omega) to the boundary of Omega.
  double distance_to_boundary(const Coord& x) const;
};

enum class Layer : std::uint8_t { omega, interaction };
enum class NodeClass : std::uint8_t { interior, constraint };

/// Element containing a point and the point's barycentric coordinates with
/// respect to that element's vertices (2 in 1D, 3 in 2D; the rest zero).
struct Location {
  int element = -1;
  std::array<double, 3> barycentric{0.0, 0.0, 0.0};
};

struct PerturbationSpec {
  double factor = 0.0;
  std::uint64_t seed = 0;
};

/// Tensor mesh of Omega union its interaction layer.
///
/// 1D: segments between consecutive breakpoints. 2D: every breakpoint
/// rectangle is split into two triangles along its lower-left to upper-right
/// diagonal; rectangle r = j*nx + i yields elements 2r (below the diagonal,
/// vertices LL, LR, UR) and 2r+1 (above, vertices LL, UR, UL).
///
/// Nodes are numbered with the interior nodes (strictly inside Omega) first,
/// followed by the constraint nodes; both groups follow lexicographic grid
/// order with x fastest.
class Mesh {
 public:
  static Mesh from_breakpoints(const BoxDomain& domain, double nominal_spacing,
                               std::vector<double> x_breaks,
                               std::vector<double> y_breaks = {});

  int dimension() const { return domain_.dimension; }
  const BoxDomain& domain() const { return domain_; }
  double nominal_spacing() const { return spacing_; }
  bool is_uniform() const { return uniform_; }

  std::span<const double> breakpoints(int axis) const {
    return axis == 0 ? std::span<const double>(x_breaks_)
                     : std::span<const double>(y_breaks_);
  }

  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  int num_interior() const { return num_interior_; }
  int num_constraint() const { return num_nodes() - num_interior_; }
  int num_elements() const { return static_cast<int>(layers_.size()); }
  int vertices_per_element() const { return dimension() + 1; }

  const Coord& node(int id) const { return nodes_[id]; }
  NodeClass node_class(int id) const {
    return id < num_interior_ ? NodeClass::interior : NodeClass::constraint;
  }

  std::span<const int> element_nodes(int element) const {
    const int nv = vertices_per_element();
    return {connectivity_.data() + static_cast<std::size_t>(element) * nv,
            static_cast<std::size_t>(nv)};
  }
  Layer element_layer(int element) const { return layers_[element]; }
  double element_measure(int element) const;

  /// Constant gradients of the element's vertex basis functions.
  std::array<Coord, 3> basis_gradients(int element) const;

  /// Physical point from barycentric coordinates.
  Coord map_to_physical(int element, const std::array<double, 3>& bary) const;

  /// Containing element of x; nullopt when x is outside closure(Omega u BOmega).
  /// Points on shared facets resolve to the lowest element id.
  std::optional<Location> locate(const Coord& x) const;

  /// Grid node id at breakpoint indices (ix, iy).
  int grid_node(int ix, int iy = 0) const {
    return grid_to_node_[static_cast<std::size_t>(iy) * x_breaks_.size() + ix];
  }

 private:
  Mesh() = default;

  BoxDomain domain_;
  double spacing_ = 0.0;
  bool uniform_ = true;
  std::vector<double> x_breaks_;
  std::vector<double> y_breaks_;
  std::vector<Coord> nodes_;
  int num_interior_ = 0;
  std::vector<int> grid_to_node_;
  std::vector<int> connectivity_;
  std::vector<Layer> layers_;

  friend Mesh perturb_mesh(const Mesh& mesh, const PerturbationSpec& spec);
};

/// Uniform segments of size h over [lower-delta, upper+delta].
/// Requires delta/h and (upper-lower)/h to be integers.
Mesh build_uniform_mesh_1d(double h, const BoxDomain& domain);

/// Uniform tensor triangulation of [lower-delta, upper+delta]^2.
Mesh build_uniform_mesh_2d(double h, const BoxDomain& domain);

Mesh build_uniform_mesh(double h, const BoxDomain& domain);

/// Randomly displaces every breakpoint strictly inside (lower-delta, lower),
/// (lower, upper) or (upper, upper+delta) by factor*h*R, R ~ U[-1, 1].
/// In 2D the x breakpoints are perturbed first, then the y breakpoints, from
/// one generator stream; the tensor mesh is then rebuilt.
Mesh perturb_mesh(const Mesh& mesh, const PerturbationSpec& spec);

/// Debug dump: node table followed by an element table.
void write_mesh_csv(const Mesh& mesh, std::ostream& out);

}  // namespace nlfem
