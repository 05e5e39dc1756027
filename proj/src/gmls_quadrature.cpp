#include "nlfem/gmls_quadrature.hpp"

#include <cmath>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ostream.h>

#include "nlfem/errors.hpp"

namespace nlfem {

void InnerGridSpec::validate() const {
  if (points_per_radius < 1) {
    throw PreconditionError(Stage::quadrature,
                            fmt::format("points per radius must be >= 1, got {}", points_per_radius));
  }
  if (dimension != 1 && dimension != 2) {
    throw PreconditionError(Stage::quadrature, "inner grid dimension must be 1 or 2");
  }
  if (!(delta > 0.0)) throw PreconditionError(Stage::quadrature, "inner grid horizon must be positive");
}

OffsetSet generate_offsets(const InnerGridSpec& spec) {
  spec.validate();
  const int n = spec.points_per_radius;
  // Component = odd * delta / (2n); computing from the odd integer keeps
  // mirrored offsets exact negatives of each other.
  const double unit = spec.delta / (2.0 * n);
  std::vector<int> odd;
  odd.reserve(2 * n);
  for (int k = -n; k <= n; ++k) {
    if (k != 0) odd.push_back(2 * k - (k > 0 ? 1 : -1));
  }
  OffsetSet set;
  set.dimension = spec.dimension;
  set.delta = spec.delta;
  set.points_per_radius = n;
  auto component = [unit](int o) { return o < 0 ? -(unit * -o) : unit * o; };
  if (spec.dimension == 1) {
    for (int a : odd) {
      set.offsets.push_back({component(a), 0.0});
      set.odd_index.push_back({a, 0});
    }
  } else {
    for (int b : odd) {
      for (int a : odd) {
        set.offsets.push_back({component(a), component(b)});
        set.odd_index.push_back({a, b});
      }
    }
  }
  return set;
}

OffsetSet filter_to_ball(const OffsetSet& offsets, BallNorm norm) {
  OffsetSet out;
  out.dimension = offsets.dimension;
  out.delta = offsets.delta;
  out.points_per_radius = offsets.points_per_radius;
  // |odd * delta/(2n)| <= delta  <=>  |odd| <= 2n, evaluated in integers.
  const long long limit = 2LL * offsets.points_per_radius;
  for (std::size_t p = 0; p < offsets.size(); ++p) {
    const long long a = offsets.odd_index[p][0];
    const long long b = offsets.odd_index[p][1];
    bool keep = false;
    if (offsets.dimension == 1 || norm == BallNorm::max) {
      keep = std::max(std::llabs(a), std::llabs(b)) <= limit;
    } else {
      keep = a * a + b * b <= limit * limit;
    }
    if (keep) {
      out.offsets.push_back(offsets.offsets[p]);
      out.odd_index.push_back(offsets.odd_index[p]);
    }
  }
  if (out.offsets.empty()) {
    throw NumericalError(Stage::quadrature, "no quadrature points left inside the ball");
  }
  return out;
}

Eigen::MatrixXd constraint_matrix(const Kernel& kernel, const Coord& center,
                                  std::span<const Coord> points) {
  const int d = kernel.dimension();
  const int rows = num_second_moments(d);
  const double tiny = 1e-14 * kernel.delta();
  Eigen::MatrixXd b(rows, static_cast<Eigen::Index>(points.size()));
  for (std::size_t j = 0; j < points.size(); ++j) {
    const Coord t{points[j][0] - center[0], d == 2 ? points[j][1] - center[1] : 0.0};
    if (ball_norm(t, d, BallNorm::max) < tiny) {
      throw NumericalError(Stage::quadrature,
                           "singular constraint: quadrature point coincides with the center");
    }
    const double gamma = kernel.evaluate_offset(t);
    for (int r = 0; r < rows; ++r) {
      b(r, static_cast<Eigen::Index>(j)) = gamma * second_moment_monomial(t, d, r);
    }
  }
  return b;
}

WeightSolution solve_weights(const Eigen::MatrixXd& constraints, const Eigen::VectorXd& moments) {
  if (constraints.rows() != moments.size()) {
    throw PreconditionError(Stage::quadrature, "constraint rows and moment count differ");
  }
  const Eigen::MatrixXd s = constraints * constraints.transpose();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(s, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::VectorXd& sigma = svd.singularValues();
  const double sigma_max = sigma.size() > 0 ? sigma(0) : 0.0;
  const double cutoff = 1e-12 * sigma_max;
  WeightSolution out;
  Eigen::VectorXd inv_sigma = Eigen::VectorXd::Zero(sigma.size());
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    if (sigma(i) > cutoff && sigma(i) > 0.0) {
      inv_sigma(i) = 1.0 / sigma(i);
      ++out.rank;
    }
  }
  if (out.rank == 0) {
    throw NumericalError(Stage::quadrature, "degenerate constraints: B B^T has no usable rank");
  }
  const Eigen::VectorXd lambda =
      svd.matrixV() * inv_sigma.asDiagonal() * (svd.matrixU().transpose() * moments);
  out.weights = constraints.transpose() * lambda;
  out.residual = (constraints * out.weights - moments).norm();
  return out;
}

InnerRuleCache::InnerRuleCache(const Kernel& kernel, const InnerGridSpec& spec)
    : kernel_(kernel), spec_(spec) {
  spec_.validate();
  if (kernel.dimension() != spec.dimension || kernel.delta() != spec.delta) {
    throw PreconditionError(Stage::quadrature, "kernel and inner grid disagree on d or delta");
  }
  ball_ = filter_to_ball(generate_offsets(spec_), kernel.norm());
  moments_ = exact_moment_integrals(kernel_);
}

std::shared_ptr<const MaskedWeights> InnerRuleCache::solve_subset(std::vector<int> index) const {
  if (index.empty()) {
    throw NumericalError(Stage::quadrature, "truncated ball retains no quadrature points");
  }
  std::vector<Coord> pts;
  pts.reserve(index.size());
  for (int p : index) pts.push_back(ball_.offsets[p]);
  const Eigen::MatrixXd b = constraint_matrix(kernel_, Coord{0.0, 0.0}, pts);
  const Eigen::VectorXd g = Eigen::Map<const Eigen::VectorXd>(
      moments_.data(), static_cast<Eigen::Index>(moments_.size()));
  WeightSolution sol = solve_weights(b, g);
  auto rule = std::make_shared<MaskedWeights>();
  rule->offset_index = std::move(index);
  rule->weights.assign(sol.weights.data(), sol.weights.data() + sol.weights.size());
  rule->kernel_weight.resize(pts.size());
  for (std::size_t k = 0; k < pts.size(); ++k) {
    rule->kernel_weight[k] = kernel_.evaluate_offset(pts[k]) * rule->weights[k];
  }
  rule->residual = sol.residual;
  return rule;
}

const MaskedWeights& InnerRuleCache::full_ball() {
  full_requests_.fetch_add(1, std::memory_order_relaxed);
  std::call_once(full_once_, [this] {
    std::vector<int> all(ball_.size());
    for (std::size_t p = 0; p < all.size(); ++p) all[p] = static_cast<int>(p);
    full_ = solve_subset(std::move(all));
    full_solves_.fetch_add(1, std::memory_order_relaxed);
  });
  return *full_;
}

const MaskedWeights& InnerRuleCache::rule_for_center(const Coord& center, const BoxDomain& domain,
                                                     double t_e) {
  const double layer = domain.delta + t_e;
  const std::size_t n = ball_.size();
  Mask mask((n + 63) / 64, 0);
  std::size_t kept = 0;
  for (std::size_t p = 0; p < n; ++p) {
    const Coord y{center[0] + ball_.offsets[p][0], center[1] + ball_.offsets[p][1]};
    if (domain.contains(y, layer)) {
      mask[p / 64] |= std::uint64_t{1} << (p % 64);
      ++kept;
    }
  }
  if (kept == n) return full_ball();

  truncated_requests_.fetch_add(1, std::memory_order_relaxed);
  {
    std::shared_lock lock(mutex_);
    auto it = truncated_.find(mask);
    if (it != truncated_.end()) return *it->second;
  }
  std::vector<int> index;
  index.reserve(kept);
  for (std::size_t p = 0; p < n; ++p) {
    if (mask[p / 64] >> (p % 64) & 1U) index.push_back(static_cast<int>(p));
  }
  auto rule = solve_subset(std::move(index));
  std::unique_lock lock(mutex_);
  auto [it, inserted] = truncated_.emplace(std::move(mask), std::move(rule));
  if (inserted) truncated_solves_.fetch_add(1, std::memory_order_relaxed);
  return *it->second;
}

InnerRuleCache::Stats InnerRuleCache::stats() const {
  return {full_requests_.load(), full_solves_.load(), truncated_requests_.load(),
          truncated_solves_.load()};
}

InnerQuadratureRule full_ball_rule(const Kernel& kernel, const InnerGridSpec& spec) {
  InnerRuleCache cache(kernel, spec);
  const MaskedWeights& w = cache.full_ball();
  InnerQuadratureRule rule;
  for (int p : w.offset_index) rule.points.push_back(cache.ball_offsets().offsets[p]);
  rule.weights = w.weights;
  rule.full_ball = true;
  rule.residual = w.residual;
  return rule;
}

InnerQuadratureRule truncated_ball_rule(const Kernel& kernel, const Coord& center,
                                        const Mesh& mesh, double t_e, const InnerGridSpec& spec,
                                        InnerRuleCache* cache) {
  std::unique_ptr<InnerRuleCache> local;
  if (cache == nullptr) {
    local = std::make_unique<InnerRuleCache>(kernel, spec);
    cache = local.get();
  }
  const BoxDomain& box = mesh.domain();
  const MaskedWeights& w = cache->rule_for_center(center, box, t_e);
  const auto& offsets = cache->ball_offsets().offsets;

  InnerQuadratureRule rule;
  rule.residual = w.residual;
  bool dropped = false;
  for (std::size_t k = 0; k < w.offset_index.size(); ++k) {
    const Coord& o = offsets[w.offset_index[k]];
    const Coord y{center[0] + o[0], center[1] + o[1]};
    if (!box.contains(y, box.delta)) {
      dropped = true;
      continue;
    }
    rule.points.push_back(y);
    rule.weights.push_back(w.weights[k]);
  }
  rule.full_ball = !dropped && w.offset_index.size() == offsets.size();
  if (rule.full_ball) {
    for (std::size_t k = 0; k < rule.points.size(); ++k) {
      rule.points[k] = offsets[w.offset_index[k]];
    }
  }
  if (rule.points.empty()) {
    throw NumericalError(Stage::quadrature, "truncated ball retains no quadrature points");
  }
  return rule;
}

std::vector<double> closed_form_weights_1d_constant(int points_per_radius, double delta) {
  if (points_per_radius < 1) {
    throw PreconditionError(Stage::quadrature, "points per radius must be >= 1");
  }
  const double n = points_per_radius;
  const double denom = 7.0 - 40.0 * n * n + 48.0 * n * n * n * n;
  std::vector<double> w;
  w.reserve(2 * points_per_radius);
  for (int k = -points_per_radius; k <= points_per_radius; ++k) {
    if (k == 0) continue;
    const double odd = 2.0 * std::abs(k) - 1.0;
    w.push_back(20.0 * delta * n * odd * odd / denom);
  }
  return w;
}

void write_rule_csv(const InnerQuadratureRule& rule, int dimension, std::ostream& out) {
  const char* coords = rule.full_ball ? (dimension == 2 ? "offset_x,offset_y" : "offset_x")
                                      : (dimension == 2 ? "x,y" : "x");
  fmt::print(out, "{},weight\n", coords);
  for (std::size_t k = 0; k < rule.points.size(); ++k) {
    if (dimension == 2) {
      fmt::print(out, "{:.17g},{:.17g},{:.17g}\n", rule.points[k][0], rule.points[k][1],
                 rule.weights[k]);
    } else {
      fmt::print(out, "{:.17g},{:.17g}\n", rule.points[k][0], rule.weights[k]);
    }
  }
}

}  // namespace nlfem
