#pragma once

#include <atomic>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "nlfem/geometry_mesh.hpp"
#include "nlfem/kernels.hpp"

namespace nlfem {

/// Regular inner grid with `points_per_radius` points per horizon along
/// each axis on either side of the center; spacing delta / points_per_radius.
struct InnerGridSpec {
  int points_per_radius = 10;
  int dimension = 1;
  double delta = 0.0;

  double spacing() const { return delta / points_per_radius; }
  void validate() const;
};

/// Relative grid offsets. Every component is an odd multiple of spacing/2;
/// `odd_index` stores those odd integers (with sign) so that ball tests can
/// be made in exact integer arithmetic.
struct OffsetSet {
  int dimension = 1;
  double delta = 0.0;
  int points_per_radius = 1;
  std::vector<Coord> offsets;
  std::vector<std::array<int, 2>> odd_index;

  std::size_t size() const { return offsets.size(); }
};

/// Full tensor grid of (2N)^d offsets, none equal to zero.
OffsetSet generate_offsets(const InnerGridSpec& spec);

/// Offsets inside the closed ball of radius delta in the given norm.
/// Throws NumericalError when nothing remains.
OffsetSet filter_to_ball(const OffsetSet& offsets, BallNorm norm);

/// Rows: |beta| = 2 multi-indices; columns: points.
/// B(beta, j) = gamma(center, x_j) (x_j - center)^beta.
Eigen::MatrixXd constraint_matrix(const Kernel& kernel, const Coord& center,
                                  std::span<const Coord> points);

struct WeightSolution {
  Eigen::VectorXd weights;
  double residual = 0.0;  ///< |B w - g|_2
  int rank = 0;
};

/// Minimal-norm weights w = B^T pinv(B B^T) g. Singular values of B B^T
/// below 1e-12 * sigma_max are discarded.
WeightSolution solve_weights(const Eigen::MatrixXd& constraints, const Eigen::VectorXd& moments);

/// Inner quadrature rule for one ball. Full-ball rules store offsets
/// relative to the center; truncated rules store absolute points.
struct InnerQuadratureRule {
  std::vector<Coord> points;
  std::vector<double> weights;
  bool full_ball = true;
  double residual = 0.0;
};

/// Weights solved on a subset (given by offset index) of the in-ball grid.
/// `kernel_weight[k]` caches gamma(offset) * weight for assembly.
struct MaskedWeights {
  std::vector<int> offset_index;
  std::vector<double> weights;
  std::vector<double> kernel_weight;
  double residual = 0.0;
};

/// Thread-safe store of inner rules for one (kernel, grid) pair.
///
/// The full-ball rule is solved once. Rules for truncated balls are keyed
/// by the inclusion bitmask of the in-ball offsets that survive clipping to
/// the extended domain; concurrent inserts for the same key may both solve,
/// but the stored value is a pure function of the key.
class InnerRuleCache {
 public:
  InnerRuleCache(const Kernel& kernel, const InnerGridSpec& spec);

  const Kernel& kernel() const { return kernel_; }
  const InnerGridSpec& spec() const { return spec_; }
  const OffsetSet& ball_offsets() const { return ball_; }
  const std::vector<double>& moments() const { return moments_; }

  /// Shared full-ball rule (index set = every in-ball offset).
  const MaskedWeights& full_ball();

  /// Rule for the in-ball offsets that land inside the closed box
  /// `domain` grown by delta + t_e around `center`.
  const MaskedWeights& rule_for_center(const Coord& center, const BoxDomain& domain,
                                       double t_e);

  struct Stats {
    std::uint64_t full_requests = 0;
    std::uint64_t full_solves = 0;
    std::uint64_t truncated_requests = 0;
    std::uint64_t truncated_solves = 0;
  };
  Stats stats() const;

 private:
  using Mask = std::vector<std::uint64_t>;
  std::shared_ptr<const MaskedWeights> solve_subset(std::vector<int> index) const;

  Kernel kernel_;
  InnerGridSpec spec_;
  OffsetSet ball_;
  std::vector<double> moments_;

  std::shared_ptr<const MaskedWeights> full_;
  std::once_flag full_once_;

  mutable std::shared_mutex mutex_;
  std::map<Mask, std::shared_ptr<const MaskedWeights>> truncated_;

  std::atomic<std::uint64_t> full_requests_{0};
  std::atomic<std::uint64_t> full_solves_{0};
  std::atomic<std::uint64_t> truncated_requests_{0};
  std::atomic<std::uint64_t> truncated_solves_{0};
};

/// Full-ball rule with offsets relative to the center.
InnerQuadratureRule full_ball_rule(const Kernel& kernel, const InnerGridSpec& spec);

/// Rule for a ball centered at `center` of the given mesh, built in three
/// steps: clip the in-ball grid to Omega u BOmega u BOmega^{t_e}; solve
/// against the full-ball moments; drop points outside Omega u BOmega along
/// with their weights. Balls that are not clipped get the full-ball rule.
InnerQuadratureRule truncated_ball_rule(const Kernel& kernel, const Coord& center,
                                        const Mesh& mesh, double t_e, const InnerGridSpec& spec,
                                        InnerRuleCache* cache = nullptr);

/// Closed-form minimal-norm weights for the 1D constant kernel on a full ball:
///   w_k = 20 delta N (2k - sgn k)^2 / (7 - 40 N^2 + 48 N^4),  k = -N..-1, 1..N.
/// Returned in increasing offset order.
std::vector<double> closed_form_weights_1d_constant(int points_per_radius, double delta);

/// CSV dump of a rule: offset/point components then weight.
void write_rule_csv(const InnerQuadratureRule& rule, int dimension, std::ostream& out);

}  // namespace nlfem
