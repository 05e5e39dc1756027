#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "nlfem/error_convergence.hpp"
#include "nlfem/geometry_mesh.hpp"
#include "nlfem/kernels.hpp"

namespace nlfem {

enum class ExtensionMode { zero, delta };
enum class MeshMode { uniform, perturbed };

/// Parsed run configuration. JSON keys match the field names below, with
/// `kernel`, `ball`, `case`, `t_e` and `mesh` given as strings.
struct RunConfig {
  int dimension = 1;
  KernelKind kernel = KernelKind::rational;
  std::optional<double> zeta;
  BallNorm ball = BallNorm::euclidean;
  std::string case_name = "sin1d";
  int m = 2;
  std::vector<double> h;  ///< descending
  ExtensionMode t_e = ExtensionMode::delta;
  int n_q = 40;
  int n_b = 40;
  int n_qp_delta = 5;
  MeshMode mesh = MeshMode::uniform;
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  int n_gs = 8;
  std::string output_dir = "out";
  bool dump_solution = true;

  /// Throws PreconditionError(Stage::config) on any violated invariant.
  void validate() const;
};

/// Parses a JSON document; unknown keys are an error. Either `h` (list) or
/// `h0` with optional `levels` (default 4, halving) must be given.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);

struct RunOptions {
  int threads = 1;
  std::optional<std::filesystem::path> out_dir;  ///< overrides output_dir
  std::optional<std::filesystem::path> dump_matrix;
  std::optional<std::filesystem::path> dump_inner_rule;
  bool record_timings = false;  ///< write measured timings instead of 0 to report.csv
  std::ostream* log = nullptr;
};

/// One solve at one mesh size.
struct SingleRun {
  ErrorRecord record;
  std::shared_ptr<const Mesh> mesh;
  Eigen::VectorXd nodal;  ///< u^h at every mesh node
  double assembly_ms = 0.0;  ///< measured, regardless of record_timings
  double solve_ms = 0.0;
  double relative_residual = 0.0;
  AssemblyStats stats;

  FEField field() const { return FEField(*mesh, nodal); }
};

/// Builds mesh, kernel and inner rules, assembles, solves and measures the
/// errors for one h. Writes the matrix/inner-rule dumps when requested.
SingleRun run_single(const RunConfig& config, double h, const RunOptions& options = {});

struct StudyResult {
  std::vector<SingleRun> runs;
  std::optional<ConvergenceReport> report;  ///< present when >= 3 levels
};

/// Runs every level in order. Nothing is written to disk.
StudyResult run_study(const RunConfig& config, const RunOptions& options = {});

/// report.csv (or a header plus rows when fewer than three levels),
/// convergence.svg and, if enabled, solution_h<h>.csv files.
void write_study_outputs(const RunConfig& config, const StudyResult& study,
                         const std::filesystem::path& dir);

/// Log-log plot of L2 and H1 errors against h with fitted slopes.
void write_convergence_svg(const std::vector<ErrorRecord>& records,
                           const std::optional<ConvergenceReport>& report, std::ostream& out);

/// Full CLI entry point (`nlfem run ...`); returns the process exit code:
/// 0 success, 2 configuration/precondition error, 3 numerical failure.
int cli_main(int argc, char** argv);

}  // namespace nlfem
