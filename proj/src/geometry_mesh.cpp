#include "nlfem/geometry_mesh.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "nlfem/errors.hpp"
#include "nlfem/rng.hpp"

namespace nlfem {

double ball_norm(const Coord& t, int dimension, BallNorm norm) {
  if (dimension == 1) return std::abs(t[0]);
  if (norm == BallNorm::max) return std::max(std::abs(t[0]), std::abs(t[1]));
  return std::hypot(t[0], t[1]);
}

BoxDomain BoxDomain::unit(int dimension, double delta, double extension) {
  BoxDomain box;
  box.dimension = dimension;
  box.delta = delta;
  box.extension = extension;
  return box;
}

void BoxDomain::validate() const {
  if (dimension != 1 && dimension != 2) {
    throw PreconditionError(Stage::mesh,
                            fmt::format("dimension must be 1 or 2, got {}", dimension));
  }
  for (int a = 0; a < dimension; ++a) {
    if (!(upper[a] > lower[a])) {
      throw PreconditionError(Stage::mesh, "box domain is degenerate");
    }
  }
  if (!(delta > 0.0)) {
    throw PreconditionError(Stage::mesh, fmt::format("horizon must be positive, got {}", delta));
  }
  if (!(extension >= 0.0 && extension <= delta)) {
    throw PreconditionError(
        Stage::mesh, fmt::format("extension thickness {} outside [0, delta={}]", extension, delta));
  }
}

bool BoxDomain::contains(const Coord& x, double layer) const {
  for (int a = 0; a < dimension; ++a) {
    if (x[a] < lower[a] - layer || x[a] > upper[a] + layer) return false;
  }
  return true;
}

double BoxDomain::distance_to_boundary(const Coord& x) const {
  double dist = std::min(x[0] - lower[0], upper[0] - x[0]);
  if (dimension == 2) dist = std::min({dist, x[1] - lower[1], upper[1] - x[1]});
  return dist;
}

namespace {

int checked_ratio(double numerator, double h, const char* what) {
  const double ratio = numerator / h;
  const double rounded = std::round(ratio);
  if (rounded < 1.0 || std::abs(ratio - rounded) > 1e-9 * std::max(1.0, ratio)) {
    throw PreconditionError(
        Stage::mesh, fmt::format("{} / h = {} / {} = {} is not a positive integer", what,
                                 numerator, h, ratio));
  }
  return static_cast<int>(rounded);
}

std::vector<double> uniform_axis(double lo, double hi, double delta, double h) {
  const int m = checked_ratio(delta, h, "delta");
  const int n = checked_ratio(hi - lo, h, "box length");
  std::vector<double> b;
  b.reserve(static_cast<std::size_t>(2 * m + n + 1));
  // The end points are written as lo - delta and hi + delta exactly so that
  // they agree bit for bit with BoxDomain::contains(x, delta).
  b.push_back(lo - delta);
  for (int k = 1; k < m; ++k) b.push_back(lo - delta * static_cast<double>(m - k) / m);
  for (int k = 0; k < n; ++k) b.push_back(lo + (hi - lo) * static_cast<double>(k) / n);
  for (int k = 0; k < m; ++k) b.push_back(hi + delta * static_cast<double>(k) / m);
  b.push_back(hi + delta);
  return b;
}

// Index of the segment containing x with ties resolved to the lower segment.
int segment_of(std::span<const double> b, double x) {
  const auto it = std::lower_bound(b.begin(), b.end(), x);
  const auto k = static_cast<int>(it - b.begin());
  return k == 0 ? 0 : k - 1;
}

}  // namespace

Mesh Mesh::from_breakpoints(const BoxDomain& domain, double nominal_spacing,
                            std::vector<double> x_breaks, std::vector<double> y_breaks) {
  domain.validate();
  Mesh mesh;
  mesh.domain_ = domain;
  mesh.spacing_ = nominal_spacing;
  mesh.x_breaks_ = std::move(x_breaks);
  mesh.y_breaks_ = std::move(y_breaks);

  const int d = domain.dimension;
  if (d == 2 && mesh.y_breaks_.empty()) {
    throw PreconditionError(Stage::mesh, "2D mesh requires y breakpoints");
  }
  auto check_axis = [](const std::vector<double>& b) {
    if (b.size() < 2) throw PreconditionError(Stage::mesh, "axis needs at least two breakpoints");
    for (std::size_t k = 1; k < b.size(); ++k) {
      if (!(b[k] > b[k - 1])) {
        throw PreconditionError(Stage::mesh, "breakpoints must be strictly increasing");
      }
    }
  };
  check_axis(mesh.x_breaks_);
  if (d == 2) check_axis(mesh.y_breaks_);

  const std::size_t nxb = mesh.x_breaks_.size();
  const std::size_t nyb = d == 2 ? mesh.y_breaks_.size() : 1;

  auto inside_open = [&](const Coord& x) {
    for (int a = 0; a < d; ++a) {
      if (!(x[a] > domain.lower[a] && x[a] < domain.upper[a])) return false;
    }
    return true;
  };

  std::vector<Coord> grid_points;
  grid_points.reserve(nxb * nyb);
  for (std::size_t iy = 0; iy < nyb; ++iy) {
    for (std::size_t ix = 0; ix < nxb; ++ix) {
      grid_points.push_back({mesh.x_breaks_[ix], d == 2 ? mesh.y_breaks_[iy] : 0.0});
    }
  }

  mesh.grid_to_node_.assign(grid_points.size(), -1);
  int next = 0;
  for (std::size_t g = 0; g < grid_points.size(); ++g) {
    if (inside_open(grid_points[g])) mesh.grid_to_node_[g] = next++;
  }
  mesh.num_interior_ = next;
  for (std::size_t g = 0; g < grid_points.size(); ++g) {
    if (mesh.grid_to_node_[g] < 0) mesh.grid_to_node_[g] = next++;
  }
  mesh.nodes_.resize(grid_points.size());
  for (std::size_t g = 0; g < grid_points.size(); ++g) {
    mesh.nodes_[mesh.grid_to_node_[g]] = grid_points[g];
  }

  auto centroid_layer = [&](std::span<const int> verts) {
    Coord c{0.0, 0.0};
    for (int v : verts) {
      for (int a = 0; a < d; ++a) c[a] += mesh.nodes_[v][a];
    }
    for (int a = 0; a < d; ++a) c[a] /= static_cast<double>(verts.size());
    return inside_open(c) ? Layer::omega : Layer::interaction;
  };

  if (d == 1) {
    for (std::size_t i = 0; i + 1 < nxb; ++i) {
      const std::array<int, 2> v{mesh.grid_node(static_cast<int>(i)),
                                 mesh.grid_node(static_cast<int>(i + 1))};
      mesh.connectivity_.insert(mesh.connectivity_.end(), v.begin(), v.end());
      mesh.layers_.push_back(centroid_layer(v));
    }
  } else {
    for (std::size_t j = 0; j + 1 < nyb; ++j) {
      for (std::size_t i = 0; i + 1 < nxb; ++i) {
        const int ii = static_cast<int>(i);
        const int jj = static_cast<int>(j);
        const int ll = mesh.grid_node(ii, jj);
        const int lr = mesh.grid_node(ii + 1, jj);
        const int ur = mesh.grid_node(ii + 1, jj + 1);
        const int ul = mesh.grid_node(ii, jj + 1);
        const std::array<int, 3> lower_tri{ll, lr, ur};
        const std::array<int, 3> upper_tri{ll, ur, ul};
        mesh.connectivity_.insert(mesh.connectivity_.end(), lower_tri.begin(), lower_tri.end());
        mesh.layers_.push_back(centroid_layer(lower_tri));
        mesh.connectivity_.insert(mesh.connectivity_.end(), upper_tri.begin(), upper_tri.end());
        mesh.layers_.push_back(centroid_layer(upper_tri));
      }
    }
  }
  return mesh;
}

double Mesh::element_measure(int element) const {
  if (dimension() == 1) return x_breaks_[element + 1] - x_breaks_[element];
  const int nx = static_cast<int>(x_breaks_.size()) - 1;
  const int r = element / 2;
  const int i = r % nx;
  const int j = r / nx;
  return 0.5 * (x_breaks_[i + 1] - x_breaks_[i]) * (y_breaks_[j + 1] - y_breaks_[j]);
}

std::array<Coord, 3> Mesh::basis_gradients(int element) const {
  if (dimension() == 1) {
    const double inv = 1.0 / (x_breaks_[element + 1] - x_breaks_[element]);
    return {Coord{-inv, 0.0}, Coord{inv, 0.0}, Coord{0.0, 0.0}};
  }
  const int nx = static_cast<int>(x_breaks_.size()) - 1;
  const int r = element / 2;
  const int i = r % nx;
  const int j = r / nx;
  const double ix = 1.0 / (x_breaks_[i + 1] - x_breaks_[i]);
  const double iy = 1.0 / (y_breaks_[j + 1] - y_breaks_[j]);
  if (element % 2 == 0) {
    return {Coord{-ix, 0.0}, Coord{ix, -iy}, Coord{0.0, iy}};
  }
  return {Coord{0.0, -iy}, Coord{ix, 0.0}, Coord{-ix, iy}};
}

Coord Mesh::map_to_physical(int element, const std::array<double, 3>& bary) const {
  Coord x{0.0, 0.0};
  const auto verts = element_nodes(element);
  for (std::size_t v = 0; v < verts.size(); ++v) {
    x[0] += bary[v] * nodes_[verts[v]][0];
    x[1] += bary[v] * nodes_[verts[v]][1];
  }
  return x;
}

std::optional<Location> Mesh::locate(const Coord& x) const {
  if (x[0] < x_breaks_.front() || x[0] > x_breaks_.back()) return std::nullopt;
  const int i = segment_of(x_breaks_, x[0]);
  const double xi = (x[0] - x_breaks_[i]) / (x_breaks_[i + 1] - x_breaks_[i]);
  Location loc;
  if (dimension() == 1) {
    loc.element = i;
    loc.barycentric = {1.0 - xi, xi, 0.0};
    return loc;
  }
  if (x[1] < y_breaks_.front() || x[1] > y_breaks_.back()) return std::nullopt;
  const int j = segment_of(y_breaks_, x[1]);
  const double eta = (x[1] - y_breaks_[j]) / (y_breaks_[j + 1] - y_breaks_[j]);
  const int r = j * (static_cast<int>(x_breaks_.size()) - 1) + i;
  if (eta <= xi) {
    loc.element = 2 * r;
    loc.barycentric = {1.0 - xi, xi - eta, eta};
  } else {
    loc.element = 2 * r + 1;
    loc.barycentric = {1.0 - eta, xi, eta - xi};
  }
  return loc;
}

Mesh build_uniform_mesh_1d(double h, const BoxDomain& domain) {
  domain.validate();
  if (domain.dimension != 1) throw PreconditionError(Stage::mesh, "expected a 1D domain");
  if (!(h > 0.0)) throw PreconditionError(Stage::mesh, "mesh size must be positive");
  return Mesh::from_breakpoints(domain, h,
                                uniform_axis(domain.lower[0], domain.upper[0], domain.delta, h));
}

Mesh build_uniform_mesh_2d(double h, const BoxDomain& domain) {
  domain.validate();
  if (domain.dimension != 2) throw PreconditionError(Stage::mesh, "expected a 2D domain");
  if (!(h > 0.0)) throw PreconditionError(Stage::mesh, "mesh size must be positive");
  return Mesh::from_breakpoints(domain, h,
                                uniform_axis(domain.lower[0], domain.upper[0], domain.delta, h),
                                uniform_axis(domain.lower[1], domain.upper[1], domain.delta, h));
}

Mesh build_uniform_mesh(double h, const BoxDomain& domain) {
  return domain.dimension == 1 ? build_uniform_mesh_1d(h, domain)
                               : build_uniform_mesh_2d(h, domain);
}

Mesh perturb_mesh(const Mesh& mesh, const PerturbationSpec& spec) {
  if (!mesh.is_uniform()) {
    throw PreconditionError(Stage::mesh, "perturb_mesh expects a uniform mesh");
  }
  if (!(spec.factor >= 0.0 && spec.factor < 0.5)) {
    throw PreconditionError(
        Stage::mesh, fmt::format("perturbation factor {} outside [0, 0.5)", spec.factor));
  }
  const BoxDomain& box = mesh.domain();
  const double amplitude = spec.factor * mesh.nominal_spacing();
  Xoshiro256pp rng(spec.seed);

  auto perturb_axis = [&](std::vector<double> b, int axis) {
    const double fixed[4] = {box.lower[axis] - box.delta, box.lower[axis], box.upper[axis],
                             box.upper[axis] + box.delta};
    for (double& x : b) {
      if (std::find(std::begin(fixed), std::end(fixed), x) != std::end(fixed)) continue;
      x += amplitude * rng.uniform_pm1();
    }
    return b;
  };

  auto xb = perturb_axis(mesh.x_breaks_, 0);
  auto yb = mesh.dimension() == 2 ? perturb_axis(mesh.y_breaks_, 1) : std::vector<double>{};
  Mesh out = Mesh::from_breakpoints(box, mesh.nominal_spacing(), std::move(xb), std::move(yb));
  out.uniform_ = spec.factor == 0.0;
  return out;
}

void write_mesh_csv(const Mesh& mesh, std::ostream& out) {
  const bool two_d = mesh.dimension() == 2;
  out << (two_d ? "id,x,y,class\n" : "id,x,class\n");
  for (int n = 0; n < mesh.num_nodes(); ++n) {
    const auto& x = mesh.node(n);
    const char* cls = mesh.node_class(n) == NodeClass::interior ? "interior" : "constraint";
    if (two_d) {
      fmt::print(out, "{},{:.17g},{:.17g},{}\n", n, x[0], x[1], cls);
    } else {
      fmt::print(out, "{},{:.17g},{}\n", n, x[0], cls);
    }
  }
  out << (two_d ? "element,n0,n1,n2,layer\n" : "element,n0,n1,layer\n");
  for (int e = 0; e < mesh.num_elements(); ++e) {
    out << e;
    for (int v : mesh.element_nodes(e)) out << ',' << v;
    out << ',' << (mesh.element_layer(e) == Layer::omega ? "omega" : "interaction") << '\n';
  }
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::config: return "config";
    case Stage::mesh: return "mesh";
    case Stage::kernel: return "kernel";
    case Stage::quadrature: return "quadrature";
    case Stage::assembly: return "assembly";
    case Stage::solve: return "solve";
    case Stage::error: return "error";
    case Stage::io: return "io";
  }
  return "unknown";
}

}  // namespace nlfem
