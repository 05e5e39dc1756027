#include "nlfem/cli_runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>

#include "nlfem/errors.hpp"
#include "nlfem/fem_assembly.hpp"
#include "nlfem/gmls_quadrature.hpp"
#include "nlfem/problems.hpp"

namespace nlfem {

namespace {

using json = nlohmann::json;

[[noreturn]] void config_error(const std::string& what) {
  throw PreconditionError(Stage::config, what);
}

template <typename T>
T get_as(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    config_error(fmt::format("key '{}' has the wrong type", key));
  }
}

int get_int(const json& j, const char* key) {
  const json& v = j.at(key);
  if (!v.is_number_integer()) config_error(fmt::format("key '{}' must be an integer", key));
  return v.get<int>();
}

std::string format_h(double h) { return fmt::format("{:.6g}", h); }

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path);
  if (!out) {
    throw PreconditionError(Stage::io, fmt::format("cannot open '{}' for writing", path.string()));
  }
  return out;
}

}  // namespace

void RunConfig::validate() const {
  if (dimension != 1 && dimension != 2) config_error("dimension must be 1 or 2");
  if (zeta && !(*zeta > 0.0)) config_error("zeta must be positive");
  if (m < 1) config_error("m = delta/h must be a positive integer");
  if (h.empty()) config_error("the h list is empty");
  for (std::size_t i = 0; i < h.size(); ++i) {
    if (!(h[i] > 0.0)) config_error("every h must be positive");
    if (i > 0 && !(h[i] < h[i - 1])) config_error("the h list must be strictly descending");
  }
  if (n_q < 1 || n_b < 1 || n_qp_delta < 1 || n_gs < 1) {
    config_error("n_q, n_b, n_qp_delta and n_gs must be positive");
  }
  if (dimension == 2) {
    for (int n : {n_q, n_b}) {
      const int r = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
      if (r * r != n) config_error(fmt::format("2D outer rules need square counts, got {}", n));
    }
  }
  const ManufacturedCase c = case_by_name(case_name);
  if (c.dimension != dimension) {
    config_error(fmt::format("case '{}' is {}D but dimension is {}", case_name, c.dimension,
                             dimension));
  }
  if (mesh == MeshMode::perturbed && !(epsilon >= 0.0 && epsilon < 0.5)) {
    config_error("epsilon must lie in [0, 0.5)");
  }
  if (output_dir.empty()) config_error("output_dir must not be empty");
}

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    config_error(fmt::format("invalid JSON: {}", e.what()));
  }
  if (!j.is_object()) config_error("the configuration must be a JSON object");

  static const std::set<std::string> known{
      "dimension", "kernel", "zeta",  "ball", "case", "m",    "h",          "h0",
      "levels",    "t_e",    "n_q",   "n_b",  "n_qp_delta", "mesh", "epsilon", "seed",
      "n_gs",      "output_dir", "dump_solution"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) config_error(fmt::format("unknown configuration key '{}'", key));
  }

  RunConfig c;
  if (j.contains("dimension")) c.dimension = get_int(j, "dimension");
  if (j.contains("kernel")) {
    try {
      c.kernel = parse_kernel_kind(get_as<std::string>(j, "kernel"));
    } catch (const PreconditionError& e) {
      config_error(e.what());
    }
  }
  if (j.contains("zeta") && !j.at("zeta").is_null()) c.zeta = get_as<double>(j, "zeta");
  if (j.contains("ball")) {
    const auto ball = get_as<std::string>(j, "ball");
    if (ball == "euclidean") {
      c.ball = BallNorm::euclidean;
    } else if (ball == "max") {
      c.ball = BallNorm::max;
    } else {
      config_error(fmt::format("ball must be 'euclidean' or 'max', got '{}'", ball));
    }
  }
  c.case_name = j.contains("case") ? get_as<std::string>(j, "case")
                                   : (c.dimension == 2 ? "sin2d" : "sin1d");
  if (j.contains("m")) c.m = get_int(j, "m");

  if (j.contains("h") && j.contains("h0")) config_error("give either 'h' or 'h0', not both");
  if (j.contains("h")) {
    if (j.contains("levels")) config_error("'levels' only applies together with 'h0'");
    const json& list = j.at("h");
    if (!list.is_array()) config_error("'h' must be a list of numbers");
    for (const auto& v : list) {
      if (!v.is_number()) config_error("'h' must be a list of numbers");
      c.h.push_back(v.get<double>());
    }
  } else if (j.contains("h0")) {
    const double h0 = get_as<double>(j, "h0");
    const int levels = j.contains("levels") ? get_int(j, "levels") : 4;
    if (levels < 1) config_error("levels must be positive");
    for (int l = 0; l < levels; ++l) c.h.push_back(h0 / std::ldexp(1.0, l));
  } else {
    config_error("missing 'h' (list) or 'h0'");
  }

  if (j.contains("t_e")) {
    const auto te = get_as<std::string>(j, "t_e");
    if (te == "zero") {
      c.t_e = ExtensionMode::zero;
    } else if (te == "delta") {
      c.t_e = ExtensionMode::delta;
    } else {
      config_error(fmt::format("t_e must be 'zero' or 'delta', got '{}'", te));
    }
  }
  c.n_q = j.contains("n_q") ? get_int(j, "n_q") : (c.dimension == 2 ? 16 : 40);
  c.n_b = j.contains("n_b") ? get_int(j, "n_b") : c.n_q;
  c.n_qp_delta = j.contains("n_qp_delta") ? get_int(j, "n_qp_delta") : (c.dimension == 2 ? 4 : 5);
  if (j.contains("mesh")) {
    const auto mode = get_as<std::string>(j, "mesh");
    if (mode == "uniform") {
      c.mesh = MeshMode::uniform;
    } else if (mode == "perturbed") {
      c.mesh = MeshMode::perturbed;
    } else {
      config_error(fmt::format("mesh must be 'uniform' or 'perturbed', got '{}'", mode));
    }
  }
  if (j.contains("epsilon")) c.epsilon = get_as<double>(j, "epsilon");
  if (c.mesh == MeshMode::perturbed && !j.contains("epsilon")) c.epsilon = 0.1;
  if (j.contains("seed")) {
    const json& s = j.at("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<long long>() >= 0)) {
      config_error("seed must be a non-negative integer");
    }
    c.seed = s.get<std::uint64_t>();
  }
  if (j.contains("n_gs")) c.n_gs = get_int(j, "n_gs");
  if (j.contains("output_dir")) c.output_dir = get_as<std::string>(j, "output_dir");
  if (j.contains("dump_solution")) c.dump_solution = get_as<bool>(j, "dump_solution");
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) config_error(fmt::format("cannot read configuration '{}'", path.string()));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

SingleRun run_single(const RunConfig& config, double h, const RunOptions& options) {
  config.validate();
  const double delta = config.m * h;
  const ManufacturedCase exact = case_by_name(config.case_name);
  const double t_e = config.t_e == ExtensionMode::delta ? delta : 0.0;
  BoxDomain box = BoxDomain::unit(config.dimension, delta, t_e);

  Mesh mesh = build_uniform_mesh(h, box);
  if (config.mesh == MeshMode::perturbed) {
    mesh = perturb_mesh(mesh, PerturbationSpec{config.epsilon, config.seed});
  }
  auto shared_mesh = std::make_shared<const Mesh>(std::move(mesh));
  const Kernel kernel(config.kernel, config.dimension, delta, config.zeta, config.ball);
  const InnerGridSpec spec{config.n_qp_delta, config.dimension, delta};

  AssemblyParams params;
  params.n_q = config.n_q;
  params.n_b = config.n_b;
  params.t_e = t_e;
  params.threads = options.threads;

  const FESpace space(*shared_mesh);
  const auto t0 = std::chrono::steady_clock::now();
  DiscreteSystem sys = assemble_system(space, kernel, spec, params, exact.b,
                                       [&exact](const Coord& x) { return exact.g(x); });
  const double assembly_ms = elapsed_ms(t0);
  const auto t1 = std::chrono::steady_clock::now();
  const SolveResult sol = solve_system(sys);
  const double solve_ms = elapsed_ms(t1);

  const FEField field = reconstruct(space, sol.u, [&exact](const Coord& x) { return exact.g(x); });

  SingleRun run;
  run.mesh = shared_mesh;
  run.nodal = field.nodal_values();
  run.assembly_ms = assembly_ms;
  run.solve_ms = solve_ms;
  run.relative_residual = sol.relative_residual;
  run.stats = sys.stats;
  run.record.h = h;
  run.record.delta = delta;
  run.record.m = config.m;
  run.record.dofs = shared_mesh->num_interior();
  run.record.l2 = l2_error(field, exact, config.n_gs);
  run.record.h1 = h1_error(field, exact, config.n_gs);
  if (options.record_timings) {
    run.record.assembly_ms = assembly_ms;
    run.record.solve_ms = solve_ms;
  }

  if (options.dump_matrix) {
    auto out = open_output(*options.dump_matrix);
    write_matrix_market(sys.A, out);
  }
  if (options.dump_inner_rule) {
    auto out = open_output(*options.dump_inner_rule);
    write_rule_csv(full_ball_rule(kernel, spec), config.dimension, out);
  }
  if (options.log) {
    fmt::print(*options.log,
               "h={} delta={} dofs={} l2={:.6e} h1={:.6e} assembly={:.1f}ms solve={:.1f}ms "
               "residual={:.2e} truncated_rules={}\n",
               format_h(h), format_h(delta), run.record.dofs, run.record.l2, run.record.h1,
               assembly_ms, solve_ms, sol.relative_residual, sys.stats.cache.truncated_solves);
  }
  return run;
}

StudyResult run_study(const RunConfig& config, const RunOptions& options) {
  config.validate();
  StudyResult study;
  for (std::size_t level = 0; level < config.h.size(); ++level) {
    RunOptions level_options = options;
    // Dumps describe the finest level only.
    if (level + 1 != config.h.size()) {
      level_options.dump_matrix.reset();
      level_options.dump_inner_rule.reset();
    }
    study.runs.push_back(run_single(config, config.h[level], level_options));
  }
  if (study.runs.size() >= 3) {
    std::vector<ErrorRecord> records;
    for (const auto& r : study.runs) records.push_back(r.record);
    study.report = make_report(std::move(records));
  }
  return study;
}

void write_convergence_svg(const std::vector<ErrorRecord>& records,
                           const std::optional<ConvergenceReport>& report, std::ostream& out) {
  constexpr double width = 640.0;
  constexpr double height = 480.0;
  constexpr double left = 80.0;
  constexpr double right = 160.0;
  constexpr double top = 40.0;
  constexpr double bottom = 60.0;

  double hmin = INFINITY, hmax = -INFINITY, emin = INFINITY, emax = -INFINITY;
  for (const auto& r : records) {
    hmin = std::min(hmin, r.h);
    hmax = std::max(hmax, r.h);
    for (double e : {r.l2, r.h1}) {
      if (e > 0.0) {
        emin = std::min(emin, e);
        emax = std::max(emax, e);
      }
    }
  }
  if (!(hmin > 0.0)) hmin = hmax = 1.0;
  if (!(emin > 0.0)) emin = emax = 1.0;
  const double x0 = std::floor(std::log10(hmin));
  const double x1 = std::max(x0 + 1.0, std::ceil(std::log10(hmax)));
  const double y0 = std::floor(std::log10(emin));
  const double y1 = std::max(y0 + 1.0, std::ceil(std::log10(emax)));
  auto px = [&](double h) {
    return left + (std::log10(h) - x0) / (x1 - x0) * (width - left - right);
  };
  auto py = [&](double e) {
    return height - bottom - (std::log10(e) - y0) / (y1 - y0) * (height - top - bottom);
  };

  fmt::print(out,
             "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" "
             "viewBox=\"0 0 {0} {1}\" data-xscale=\"log\" data-yscale=\"log\">\n",
             width, height);
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<g stroke=\"#ddd\" stroke-width=\"1\" font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int k = static_cast<int>(x0); k <= static_cast<int>(x1); ++k) {
    const double x = px(std::pow(10.0, k));
    fmt::print(out, "<line x1=\"{0:.2f}\" y1=\"{1}\" x2=\"{0:.2f}\" y2=\"{2}\"/>\n", x, top,
               height - bottom);
    fmt::print(out, "<text x=\"{:.2f}\" y=\"{}\" stroke=\"none\" fill=\"#333\" "
               "text-anchor=\"middle\">1e{}</text>\n", x, height - bottom + 16, k);
  }
  for (int k = static_cast<int>(y0); k <= static_cast<int>(y1); ++k) {
    const double y = py(std::pow(10.0, k));
    fmt::print(out, "<line x1=\"{0}\" y1=\"{1:.2f}\" x2=\"{2}\" y2=\"{1:.2f}\"/>\n", left, y,
               width - right);
    fmt::print(out, "<text x=\"{}\" y=\"{:.2f}\" stroke=\"none\" fill=\"#333\" "
               "text-anchor=\"end\">1e{}</text>\n", left - 6, y + 4, k);
  }
  out << "</g>\n";
  fmt::print(out, "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" "
             "text-anchor=\"middle\">h</text>\n", (left + width - right) / 2, height - 20);
  fmt::print(out, "<text x=\"20\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\" "
             "transform=\"rotate(-90 20 {})\" text-anchor=\"middle\">error</text>\n",
             (top + height - bottom) / 2, (top + height - bottom) / 2);

  struct Series {
    const char* name;
    const char* color;
    double ErrorRecord::*field;
    const GuardedRate* rate;
  };
  const Series series[] = {
      {"l2", "#1f77b4", &ErrorRecord::l2, report ? &report->l2_rate : nullptr},
      {"h1", "#d62728", &ErrorRecord::h1, report ? &report->h1_rate : nullptr},
  };
  int row = 0;
  for (const auto& s : series) {
    fmt::print(out, "<g class=\"series\" data-norm=\"{}\">\n", s.name);
    std::string path;
    for (const auto& r : records) {
      const double e = r.*s.field;
      if (!(e > 0.0)) continue;
      path += fmt::format("{}{:.2f},{:.2f}", path.empty() ? "" : " ", px(r.h), py(e));
    }
    if (!path.empty()) {
      fmt::print(out, "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                 s.color, path);
    }
    for (const auto& r : records) {
      const double e = r.*s.field;
      if (!(e > 0.0)) continue;
      fmt::print(out,
                 "<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"3.5\" fill=\"{}\" data-h=\"{:.17g}\" "
                 "data-{}=\"{:.17g}\"/>\n",
                 px(r.h), py(e), s.color, r.h, s.name, e);
    }
    std::string label = s.name[0] == 'l' ? "L2" : "H1";
    if (s.rate) label += fmt::format(" slope {:.2f}", s.rate->preferred().slope);
    fmt::print(out, "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" "
               "fill=\"{}\">{}</text>\n", width - right + 12, top + 20 + 18 * row, s.color, label);
    out << "</g>\n";
    ++row;
  }
  out << "</svg>\n";
}

void write_study_outputs(const RunConfig& config, const StudyResult& study,
                         const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw PreconditionError(Stage::io,
                            fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
  }
  std::vector<ErrorRecord> records;
  for (const auto& r : study.runs) records.push_back(r.record);
  {
    auto out = open_output(dir / "report.csv");
    if (study.report) {
      write_report_csv(*study.report, out);
    } else {
      out << "h,delta,m,dofs,l2,h1,assembly_ms,solve_ms\n";
      for (const auto& r : records) {
        fmt::print(out, "{:.17g},{:.17g},{},{},{:.17g},{:.17g},{:.17g},{:.17g}\n", r.h, r.delta,
                   r.m, r.dofs, r.l2, r.h1, r.assembly_ms, r.solve_ms);
      }
    }
  }
  {
    auto out = open_output(dir / "convergence.svg");
    write_convergence_svg(study.report ? study.report->records : records, study.report, out);
  }
  if (config.dump_solution) {
    for (const auto& r : study.runs) {
      auto out = open_output(dir / fmt::format("solution_h{}.csv", format_h(r.record.h)));
      write_solution_csv(r.field(), out);
    }
  }
}

int cli_main(int argc, char** argv) {
  CLI::App app{"Nonlocal Poisson finite element solver with optimization-based quadrature"};
  app.require_subcommand(1);
  CLI::App* run = app.add_subcommand("run", "Run a single solve or a refinement study");
  std::string config_path;
  std::string out_dir;
  std::string dump_matrix;
  std::string dump_rule;
  int threads = 1;
  bool record_timings = false;
  run->add_option("--config", config_path, "JSON run configuration")->required();
  run->add_option("--out", out_dir, "Output directory (overrides output_dir)");
  run->add_option("--dump-matrix", dump_matrix, "Matrix Market dump of A (finest level)");
  run->add_option("--dump-inner-rule", dump_rule, "CSV dump of the full-ball inner rule");
  run->add_option("--threads", threads, "Assembly threads")->check(CLI::PositiveNumber);
  run->add_flag("--record-timings", record_timings,
                "Write measured timings to report.csv (output is then not reproducible)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const RunConfig config = load_config(config_path);
    RunOptions options;
    options.threads = threads;
    options.record_timings = record_timings;
    options.log = &std::cout;
    if (!dump_matrix.empty()) options.dump_matrix = dump_matrix;
    if (!dump_rule.empty()) options.dump_inner_rule = dump_rule;
    const std::filesystem::path dir = out_dir.empty() ? config.output_dir : out_dir;
    const StudyResult study = run_study(config, options);
    write_study_outputs(config, study, dir);
    if (study.report) {
      fmt::print("L2 slope {:.4f}, H1 slope {:.4f}\n", study.report->l2_rate.preferred().slope,
                 study.report->h1_rate.preferred().slope);
    }
    fmt::print("wrote {}\n", dir.string());
    return 0;
  } catch (const PreconditionError& e) {
    fmt::print(stderr, "error [{}]: {}\n", to_string(e.stage()), e.what());
    return 2;
  } catch (const NumericalError& e) {
    fmt::print(stderr, "error [{}]: {}\n", to_string(e.stage()), e.what());
    return 3;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 3;
  }
}

}  // namespace nlfem
