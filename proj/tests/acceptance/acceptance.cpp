// Acceptance suite: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria (capped at 125).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "nlfem/cli_runner.hpp"
#include "nlfem/error_convergence.hpp"
#include "nlfem/fem_assembly.hpp"
#include "nlfem/gmls_quadrature.hpp"
#include "nlfem/rng.hpp"
#include "oracles.hpp"

namespace {

using namespace nlfem;
using std::numbers::pi;

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, std::string note) {
    pass = pass && ok;
    notes.push_back((ok ? "" : "!! ") + std::move(note));
  }
  void info(std::string note) { notes.push_back("info: " + std::move(note)); }
};

int failures = 0;

void criterion(int id, const std::string& name, double limit_s,
               const std::function<void(Outcome&)>& body) {
  Outcome out;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(out);
  } catch (const std::exception& e) {
    out.check(false, fmt::format("exception: {}", e.what()));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.check(secs < limit_s, fmt::format("runtime {:.2f} s (limit {} s)", secs, limit_s));
  if (!out.pass) ++failures;
  std::cout << (out.pass ? "PASS" : "FAIL") << " [" << id << "] " << name << "\n";
  for (const auto& n : out.notes) std::cout << "       " << n << "\n";
  std::cout.flush();
}

std::string in_range(double v, double lo, double hi) {
  return fmt::format("{:.4f} in [{}, {}]", v, lo, hi);
}

bool within(double v, double lo, double hi) { return v >= lo && v <= hi; }

StudyResult study(const std::string& json) { return run_study(parse_config(json)); }

std::string kernel_name(KernelKind k) { return std::string(to_string(k)); }

double symmetry_defect(const SparseMatrix& a) {
  const Eigen::MatrixXd d(a);
  const double scale = d.cwiseAbs().maxCoeff();
  return (d - d.transpose()).cwiseAbs().maxCoeff() / scale;
}

// sum_k w_k gamma(t_k) t_k^beta for every |beta| = 2.
std::vector<double> rule_moments(const Kernel& k, const InnerQuadratureRule& rule) {
  const int d = k.dimension();
  std::vector<double> m(d == 1 ? 1 : 3, 0.0);
  for (std::size_t i = 0; i < rule.points.size(); ++i) {
    const Coord& t = rule.points[i];
    const double gw = rule.weights[i] * k.evaluate_offset(t);
    if (d == 1) {
      m[0] += gw * t[0] * t[0];
    } else {
      m[0] += gw * t[0] * t[0];
      m[1] += gw * t[0] * t[1];
      m[2] += gw * t[1] * t[1];
    }
  }
  return m;
}

void quadrature_exactness(Outcome& out) {
  // With the default scaling every diagonal second moment equals one and the
  // mixed moment vanishes.
  double worst = 0.0;
  double min_weight = INFINITY;
  for (int d : {1, 2}) {
    for (auto kind : {KernelKind::constant, KernelKind::rational}) {
      for (int n : {1, 2, 4, 8, 10}) {
        for (double delta : {0.3, 1.0}) {
          const Kernel k(kind, d, delta);
          const auto rule = full_ball_rule(k, {n, d, delta});
          const auto m = rule_moments(k, rule);
          const std::vector<double> target = d == 1 ? std::vector<double>{1.0}
                                                    : std::vector<double>{1.0, 0.0, 1.0};
          for (std::size_t b = 0; b < m.size(); ++b) worst = std::max(worst, std::abs(m[b] - target[b]));
          for (double w : rule.weights) min_weight = std::min(min_weight, w);
        }
      }
    }
  }
  out.check(worst <= 1e-12, fmt::format("max relative moment defect {:.2e} <= 1e-12", worst));
  out.check(min_weight > 0.0, fmt::format("min weight {:.3e} > 0", min_weight));
}

void closed_form(Outcome& out) {
  double worst = 0.0;
  for (int n = 1; n <= 20; ++n) {
    for (double delta : {0.1, 1.0}) {
      const auto rule = full_ball_rule(Kernel(KernelKind::constant, 1, delta), {n, 1, delta});
      // Offsets come in increasing order: k = -n..-1, 1..n.
      const double den = 7.0 - 40.0 * n * n + 48.0 * std::pow(n, 4);
      std::size_t i = 0;
      double scale = 0.0;
      double diff = 0.0;
      for (int k = -n; k <= n; ++k) {
        if (k == 0) continue;
        const double s = k > 0 ? 1.0 : -1.0;
        const double w = 20.0 * delta * n * (2 * k - s) * (2 * k - s) / den;
        scale = std::max(scale, std::abs(w));
        diff = std::max(diff, std::abs(rule.weights.at(i++) - w));
      }
      if (i != rule.weights.size()) diff = INFINITY;
      worst = std::max(worst, diff / scale);
    }
  }
  out.check(worst <= 1e-12, fmt::format("N 1..20: max relative deviation {:.2e} <= 1e-12", worst));
  // N = 1: two offsets +-delta/2 with gamma = 3/(2 delta^3). The minimal-norm
  // solution of 2 w gamma (delta/2)^2 = 1 is w = 4 delta / 3.
  const double delta = 0.7;
  const auto rule = full_ball_rule(Kernel(KernelKind::constant, 1, delta), {1, 1, delta});
  double dev = 0.0;
  for (double w : rule.weights) dev = std::max(dev, std::abs(w - 4.0 * delta / 3.0) / (4.0 * delta / 3.0));
  out.check(rule.weights.size() == 2 && dev <= 1e-12,
            fmt::format("N=1 weights equal 4 delta/3 (relative {:.2e})", dev));
}

void patch_test(Outcome& out) {
  for (const char* kernel : {"constant", "rational"}) {
    const auto r = study(fmt::format(
        R"({{"case": "linear1d", "kernel": "{}", "h": [0.01], "m": 2, "t_e": "delta"}})", kernel));
    const double l2 = r.runs.at(0).record.l2;
    out.check(l2 <= 1e-10, fmt::format("{}: L2 {:.3e} <= 1e-10", kernel, l2));
  }
}

const char* kLadder = "[0.0625, 0.03125, 0.015625, 0.0078125]";

void boundary_extension(Outcome& out) {
  for (const char* te : {"zero", "delta"}) {
    const std::string cfg = fmt::format(
        R"({{"case": "sin1d", "kernel": "rational", "m": 2, "t_e": "{}", "h": {}}})", te, kLadder);
    const RunConfig config = parse_config(cfg);
    const StudyResult r = run_study(config);
    const double slope = r.report->l2_rate.preferred().slope;
    const bool zero = std::string(te) == "zero";
    out.check(zero ? within(slope, 0.8, 1.3) : within(slope, 1.8, 2.2),
              fmt::format("t_e={}: L2 slope {}", te,
                          zero ? in_range(slope, 0.8, 1.3) : in_range(slope, 1.8, 2.2)));
    std::string local;
    for (std::size_t i = 1; i < r.runs.size(); ++i) {
      const auto& a = r.runs[i - 1].record;
      const auto& b = r.runs[i].record;
      local += fmt::format(" {:.3f}", std::log(a.l2 / b.l2) / std::log(a.h / b.h));
    }
    out.info(fmt::format("t_e={}: pairwise L2 slopes{}", te, local));
    const ManufacturedCase exact = case_by_name("sin1d");
    std::string ratios;
    bool ok = true;
    for (const auto& run : r.runs) {
      // Near band: nodes within two horizons of the boundary.
      const double ratio = boundary_concentration_ratio(run.field(), exact, 2.0 * run.record.delta);
      ratios += fmt::format(" {:.2f}", ratio);
      ok = ok && (zero ? ratio >= 2.0 : ratio < 2.0);
    }
    out.check(ok, fmt::format("t_e={}: near/far max nodal error ratio per level{} ({})", te, ratios,
                              zero ? ">= 2 required" : "< 2 required"));
  }
}

void uniform_rates(Outcome& out) {
  for (int m : {1, 2, 3}) {
    for (const char* kernel : {"constant", "rational"}) {
      const auto r = study(fmt::format(R"({{"case": "sin1d", "kernel": "{}", "m": {}, "h": {}}})",
                                       kernel, m, kLadder));
      const double l2 = r.report->l2_rate.preferred().slope;
      const double h1 = r.report->h1_rate.preferred().slope;
      out.check(within(l2, 1.8, 2.2) && within(h1, 0.8, 1.2),
                fmt::format("{} m={}: L2 slope {}, H1 slope {}", kernel, m, in_range(l2, 1.8, 2.2),
                            in_range(h1, 0.8, 1.2)));
    }
  }
}

void nonuniform_linear(Outcome& out) {
  for (const char* kernel : {"constant", "rational"}) {
    const auto r = study(fmt::format(
        R"({{"case": "linear1d", "kernel": "{}", "m": 2, "t_e": "delta", "mesh": "perturbed",
            "epsilon": 0.1, "seed": 2024, "h": {}}})",
        kernel, kLadder));
    const double l2 = r.report->l2_rate.preferred().slope;
    const double h1 = r.report->h1_rate.preferred().slope;
    out.check(within(l2, 0.7, 1.4) && within(h1, -0.3, 0.4),
              fmt::format("{}: L2 slope {}, H1 slope {}", kernel, in_range(l2, 0.7, 1.4),
                          in_range(h1, -0.3, 0.4)));
  }
}

void nonuniform_sine(Outcome& out) {
  for (int m : {2, 3}) {
    for (const char* kernel : {"constant", "rational"}) {
      const auto r = study(fmt::format(
          R"({{"case": "sin1d", "kernel": "{}", "m": {}, "mesh": "perturbed", "epsilon": 0.1,
              "seed": 2024, "h": {}}})",
          kernel, m, kLadder));
      const double l2 = r.report->l2_rate.preferred().slope;
      out.check(within(l2, 1.6, 2.3), fmt::format("{} m={}: L2 slope {}", kernel, m, in_range(l2, 1.6, 2.3)));
    }
  }
}

void rates_2d(Outcome& out, bool perturbed, double lo, double hi) {
  for (const char* kernel : {"constant", "rational"}) {
    const std::string mesh = perturbed ? R"("mesh": "perturbed", "epsilon": 0.1, "seed": 2024,)" : "";
    const auto r = study(fmt::format(
        R"({{"dimension": 2, "case": "sin2d", "kernel": "{}", "m": 2, "t_e": "delta", "n_q": 16,
            "n_qp_delta": 4, {} "h": [0.125, 0.0625, 0.03125]}})",
        kernel, mesh));
    const double l2 = r.report->l2_rate.preferred().slope;
    out.check(within(l2, lo, hi), fmt::format("{}: L2 slope {}", kernel, in_range(l2, lo, hi)));
  }
}

void assembly_oracle(Outcome& out) {
  double worst = 0.0;
  for (double h : {0.25, 0.125}) {
    for (auto kind : {KernelKind::constant, KernelKind::rational}) {
      for (int n : {1, 2, 5}) {
        for (double t_e : {0.0, h}) {
          const Mesh mesh = build_uniform_mesh_1d(h, BoxDomain::unit(1, h, t_e));
          const Kernel k(kind, 1, h);
          AssemblyParams p;
          p.t_e = t_e;
          p.full_matrix = true;
          const auto sys = assemble_stiffness(FESpace(mesh), k, {n, 1, h}, p);
          const Eigen::MatrixXd naive = oracle::naive_stiffness_1d(mesh, k, n, t_e);
          worst = std::max(worst, (Eigen::MatrixXd(sys.A_full) - naive).cwiseAbs().maxCoeff());
        }
      }
    }
  }
  out.check(worst <= 1e-13, fmt::format("max entrywise deviation from naive oracle {:.2e} <= 1e-13", worst));

  // Symmetry over a spread of assemblies.
  double sym = 0.0;
  int runs = 0;
  for (int d : {1, 2}) {
    for (auto kind : {KernelKind::constant, KernelKind::rational}) {
      for (double eps : {0.0, 0.1}) {
        for (bool extend : {false, true}) {
          const double h = d == 1 ? 1.0 / 32 : 1.0 / 8;
          const double delta = 2 * h;
          const double t_e = extend ? delta : 0.0;
          Mesh mesh = build_uniform_mesh(h, BoxDomain::unit(d, delta, t_e));
          if (eps > 0) mesh = perturb_mesh(mesh, {eps, 11});
          AssemblyParams p;
          p.t_e = t_e;
          p.n_q = d == 1 ? 40 : 16;
          p.n_b = p.n_q;
          const auto sys = assemble_stiffness(FESpace(mesh), Kernel(kind, d, delta),
                                              {d == 1 ? 5 : 4, d, delta}, p);
          sym = std::max(sym, symmetry_defect(sys.A));
          ++runs;
        }
      }
    }
  }
  out.check(sym <= 1e-12, fmt::format("symmetry defect over {} assemblies {:.2e} <= 1e-12 relative", runs, sym));
}

void coercivity(Outcome& out) {
  for (auto kind : {KernelKind::constant, KernelKind::rational}) {
    std::vector<double> c;
    for (double h : {1.0 / 16, 1.0 / 32, 1.0 / 64}) {
      const Mesh mesh = build_uniform_mesh_1d(h, BoxDomain::unit(1, h, h));
      AssemblyParams p;
      p.t_e = h;
      const auto sys = assemble_stiffness(FESpace(mesh), Kernel(kind, 1, h), {5, 1, h}, p);
      Xoshiro256pp rng(42);
      double lowest = INFINITY;
      for (int trial = 0; trial < 100; ++trial) {
        Eigen::VectorXd u(mesh.num_interior());
        for (int i = 0; i < u.size(); ++i) u[i] = rng.uniform_pm1();
        Eigen::VectorXd nodal = Eigen::VectorXd::Zero(mesh.num_nodes());
        nodal.head(u.size()) = u;
        const double semi = h1_seminorm_squared(FEField(mesh, nodal));
        lowest = std::min(lowest, u.dot(sys.A * u) / semi);
      }
      c.push_back(lowest);
    }
    double mean = 0.0;
    for (double v : c) mean += v / c.size();
    double spread = 0.0;
    for (double v : c) spread = std::max(spread, std::abs(v - mean) / mean);
    const bool positive = std::all_of(c.begin(), c.end(), [](double v) { return v > 0.0; });
    out.check(positive && spread <= 0.2,
              fmt::format("{}: min ratios {:.4f} {:.4f} {:.4f}, max deviation from mean {:.1f}% <= 20%",
                          kernel_name(kind), c[0], c[1], c[2], 100 * spread));
  }
}

void strang(Outcome& out) {
  // v^h interpolates sin(2 pi x) at every node, constraint nodes included, so
  // it lies in g^h + V0^h like the discrete solutions it stands in for.
  const std::vector<double> hs{1.0 / 8, 1.0 / 16, 1.0 / 32, 1.0 / 64};
  for (auto kind : {KernelKind::constant, KernelKind::rational}) {
    std::vector<double> gaps;
    std::vector<double> zero_layer;
    for (double h : hs) {
      const Mesh mesh = build_uniform_mesh_1d(h, BoxDomain::unit(1, h, h));
      const Kernel k(kind, 1, h);
      Eigen::VectorXd v(mesh.num_nodes());
      for (int i = 0; i < v.size(); ++i) v[i] = std::sin(2 * pi * mesh.node(i)[0]);
      gaps.push_back(strang_gap_dual_norm(v, k, mesh, {5, 1, h}, h, 40));
      zero_layer.push_back(
          strang_gap_dual_norm(v.head(mesh.num_interior()), k, mesh, {5, 1, h}, h, 40));
    }
    const double slope = fit_rate(hs, gaps).slope;
    bool decreasing = true;
    for (std::size_t i = 1; i < gaps.size(); ++i) decreasing = decreasing && gaps[i] < gaps[i - 1];
    out.check(decreasing && slope >= 1.0,
              fmt::format("{}: gaps {:.3e} {:.3e} {:.3e} {:.3e}, fitted slope {:.3f} >= 1",
                          kernel_name(kind), gaps[0], gaps[1], gaps[2], gaps[3], slope));
    out.info(fmt::format("{}: with v^h set to zero on the layer the slope is {:.3f}",
                         kernel_name(kind), fit_rate(hs, zero_layer).slope));
  }
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void determinism(Outcome& out) {
  const auto root = std::filesystem::temp_directory_path() / "nlfem_acceptance_determinism";
  std::filesystem::remove_all(root);
  const std::vector<std::string> configs{
      R"({"case": "sin1d", "mesh": "perturbed", "epsilon": 0.2, "seed": 99, "h0": 0.0625})",
      R"({"dimension": 2, "mesh": "perturbed", "seed": 5, "h": [0.25, 0.125, 0.0625]})"};
  for (std::size_t c = 0; c < configs.size(); ++c) {
    const RunConfig config = parse_config(configs[c]);
    std::string first;
    for (int rep = 0; rep < 2; ++rep) {
      RunOptions options;
      options.threads = rep + 1;
      const auto dir = root / fmt::format("c{}_r{}", c, rep);
      write_study_outputs(config, run_study(config, options), dir);
      const std::string text = slurp(dir / "report.csv");
      if (rep == 0) {
        first = text;
      } else {
        out.check(!first.empty() && text == first,
                  fmt::format("config {}: report.csv identical on rerun ({} bytes)", c, text.size()));
      }
    }
  }
  std::filesystem::remove_all(root);
}

}  // namespace

int main() {
  criterion(1, "full-ball quadrature exactness and positivity", 1.0, quadrature_exactness);
  criterion(2, "closed-form 1D constant-kernel weights", 1.0, closed_form);
  criterion(3, "patch test", 10.0, patch_test);
  criterion(4, "boundary-extension effect", 60.0, boundary_extension);
  criterion(5, "uniform 1D rates", 180.0, uniform_rates);
  criterion(6, "nonuniform 1D rates, linear case", 60.0, nonuniform_linear);
  criterion(7, "nonuniform 1D rates, sinusoidal case", 120.0, nonuniform_sine);
  criterion(8, "2D uniform rates", 600.0, [](Outcome& o) { rates_2d(o, false, 1.7, 2.3); });
  criterion(9, "2D perturbed rates", 900.0, [](Outcome& o) { rates_2d(o, true, 1.6, 2.3); });
  criterion(10, "assembly oracle equivalence and symmetry", 10.0, assembly_oracle);
  criterion(11, "coercivity surrogate", 30.0, coercivity);
  criterion(12, "Strang gap decay", 30.0, strang);
  criterion(13, "determinism of report.csv", 60.0, determinism);
  std::cout << (13 - failures) << "/13 criteria passed\n";
  return std::min(failures, 125);
}
