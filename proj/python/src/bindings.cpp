#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "nlfem/cli_runner.hpp"
#include "nlfem/error_convergence.hpp"
#include "nlfem/errors.hpp"
#include "nlfem/fem_assembly.hpp"
#include "nlfem/gmls_quadrature.hpp"
#include "nlfem/kernels.hpp"

namespace py = pybind11;
using namespace nlfem;

namespace {

BallNorm parse_ball(const std::string& name) {
  if (name == "euclidean") return BallNorm::euclidean;
  if (name == "max") return BallNorm::max;
  throw PreconditionError(Stage::config, "ball must be 'euclidean' or 'max'");
}

Coord to_coord(const std::vector<double>& x) {
  if (x.empty() || x.size() > 2) throw PreconditionError(Stage::config, "expected 1 or 2 coordinates");
  return {x[0], x.size() == 2 ? x[1] : 0.0};
}

Eigen::MatrixXd node_array(const Mesh& mesh) {
  Eigen::MatrixXd out(mesh.num_nodes(), mesh.dimension());
  for (int i = 0; i < mesh.num_nodes(); ++i) {
    for (int k = 0; k < mesh.dimension(); ++k) out(i, k) = mesh.node(i)[k];
  }
  return out;
}

Eigen::MatrixXi element_array(const Mesh& mesh) {
  Eigen::MatrixXi out(mesh.num_elements(), mesh.vertices_per_element());
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const auto nodes = mesh.element_nodes(e);
    for (int k = 0; k < mesh.vertices_per_element(); ++k) out(e, k) = nodes[k];
  }
  return out;
}

py::dict record_dict(const ErrorRecord& r) {
  py::dict d;
  d["h"] = r.h;
  d["delta"] = r.delta;
  d["m"] = r.m;
  d["dofs"] = r.dofs;
  d["l2"] = r.l2;
  d["h1"] = r.h1;
  d["assembly_ms"] = r.assembly_ms;
  d["solve_ms"] = r.solve_ms;
  return d;
}

py::dict fit_dict(const RateFit& f) {
  py::dict d;
  d["slope"] = f.slope;
  d["intercept"] = f.intercept;
  d["residual"] = f.residual;
  d["points"] = f.points;
  return d;
}

}  // namespace

PYBIND11_MODULE(_nlfem, m) {
  m.doc() = "Nonlocal Poisson finite elements with optimization-based inner quadrature";

  static py::exception<PreconditionError> precondition(m, "PreconditionError", PyExc_ValueError);
  static py::exception<NumericalError> numerical(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const PreconditionError& e) {
      precondition(e.what());
    } catch (const NumericalError& e) {
      numerical(e.what());
    }
  });

  m.def("default_zeta", [](const std::string& kind, int d) { return default_zeta(parse_kernel_kind(kind), d); },
        py::arg("kind"), py::arg("dimension"));

  py::class_<Kernel>(m, "Kernel")
      .def(py::init([](const std::string& kind, int d, double delta, std::optional<double> zeta,
                       const std::string& ball) {
             return Kernel(parse_kernel_kind(kind), d, delta, zeta, parse_ball(ball));
           }),
           py::arg("kind"), py::arg("dimension"), py::arg("delta"), py::arg("zeta") = py::none(),
           py::arg("ball") = "euclidean")
      .def_property_readonly("kind", [](const Kernel& k) { return std::string(to_string(k.kind())); })
      .def_property_readonly("dimension", &Kernel::dimension)
      .def_property_readonly("delta", &Kernel::delta)
      .def_property_readonly("zeta", &Kernel::zeta)
      .def("evaluate_offset", [](const Kernel& k, const std::vector<double>& t) { return k.evaluate_offset(to_coord(t)); })
      .def("moments", [](const Kernel& k) { return exact_moment_integrals(k); },
           "Integrals of gamma(t) t^beta over the ball for |beta| = 2.");

  m.def(
      "full_ball_rule",
      [](const Kernel& k, int points_per_radius) {
        const auto rule = full_ball_rule(k, {points_per_radius, k.dimension(), k.delta()});
        Eigen::MatrixXd pts(rule.points.size(), k.dimension());
        for (std::size_t i = 0; i < rule.points.size(); ++i) {
          for (int c = 0; c < k.dimension(); ++c) pts(static_cast<Eigen::Index>(i), c) = rule.points[i][c];
        }
        const Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(rule.weights.data(), rule.weights.size());
        return py::make_tuple(pts, w);
      },
      py::arg("kernel"), py::arg("points_per_radius"),
      "Offsets (n x d) and minimal-norm weights of the full-ball inner rule.");

  m.def("closed_form_weights_1d_constant", &closed_form_weights_1d_constant, py::arg("points_per_radius"),
        py::arg("delta"));

  py::class_<Mesh>(m, "Mesh")
      .def_property_readonly("dimension", &Mesh::dimension)
      .def_property_readonly("num_nodes", &Mesh::num_nodes)
      .def_property_readonly("num_interior", &Mesh::num_interior)
      .def_property_readonly("num_elements", &Mesh::num_elements)
      .def_property_readonly("nodes", &node_array)
      .def_property_readonly("elements", &element_array)
      .def("element_in_omega", [](const Mesh& mesh, int e) { return mesh.element_layer(e) == Layer::omega; });

  m.def(
      "build_mesh",
      [](double h, int d, double delta, double t_e, double epsilon, std::uint64_t seed) {
        Mesh mesh = build_uniform_mesh(h, BoxDomain::unit(d, delta, t_e));
        if (epsilon > 0.0) mesh = perturb_mesh(mesh, {epsilon, seed});
        return mesh;
      },
      py::arg("h"), py::arg("dimension"), py::arg("delta"), py::arg("t_e") = 0.0, py::arg("epsilon") = 0.0,
      py::arg("seed") = 0, "Uniform mesh of (0,1)^d plus its interaction layer, optionally perturbed.");

  m.def(
      "assemble_stiffness_coo",
      [](const Mesh& mesh, const Kernel& k, int points_per_radius, int n_q, double t_e, int threads) {
        AssemblyParams p;
        p.n_q = n_q;
        p.n_b = n_q;
        p.t_e = t_e;
        p.threads = threads;
        const SparseMatrix a =
            assemble_stiffness(FESpace(mesh), k, {points_per_radius, k.dimension(), k.delta()}, p).A;
        Eigen::VectorXi rows(a.nonZeros());
        Eigen::VectorXi cols(a.nonZeros());
        Eigen::VectorXd vals(a.nonZeros());
        Eigen::Index n = 0;
        for (Eigen::Index c = 0; c < a.outerSize(); ++c) {
          for (SparseMatrix::InnerIterator it(a, c); it; ++it, ++n) {
            rows[n] = static_cast<int>(it.row());
            cols[n] = static_cast<int>(it.col());
            vals[n] = it.value();
          }
        }
        return py::make_tuple(rows, cols, vals, py::make_tuple(a.rows(), a.cols()));
      },
      py::arg("mesh"), py::arg("kernel"), py::arg("points_per_radius") = 5, py::arg("n_q") = 40,
      py::arg("t_e") = 0.0, py::arg("threads") = 1,
      "Interior-interior stiffness matrix as (rows, cols, values, shape).");

  m.def(
      "fit_rate",
      [](const std::vector<double>& h, const std::vector<double>& e) { return fit_dict(fit_rate(h, e)); },
      py::arg("h"), py::arg("error"));

  m.def(
      "run_study",
      [](const std::string& config_json, int threads) {
        RunOptions options;
        options.threads = threads;
        const StudyResult study = run_study(parse_config(config_json), options);
        py::dict out;
        py::list records;
        for (const auto& r : study.runs) records.append(record_dict(r.record));
        out["records"] = records;
        if (study.report) {
          out["l2_slope"] = fit_dict(study.report->l2_rate.preferred());
          out["h1_slope"] = fit_dict(study.report->h1_rate.preferred());
        }
        return out;
      },
      py::arg("config_json"), py::arg("threads") = 1);

  m.def(
      "cli_main",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "nlfem");
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        return cli_main(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Runs the command line entry point and returns its exit code.");
}
