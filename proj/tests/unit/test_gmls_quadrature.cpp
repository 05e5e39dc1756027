#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>
#include <thread>

#include <Eigen/Dense>

#include "nlfem/errors.hpp"
#include "nlfem/gmls_quadrature.hpp"
#include "nlfem/rng.hpp"

namespace nlfem {
namespace {

// Dense saddle-point solve [I B^T; B 0][w; lambda] = [0; g].
Eigen::VectorXd kkt_weights(const Eigen::MatrixXd& b, const Eigen::VectorXd& g) {
  const Eigen::Index n = b.cols();
  const Eigen::Index m = b.rows();
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(n + m, n + m);
  k.topLeftCorner(n, n).setIdentity();
  k.topRightCorner(n, m) = b.transpose();
  k.bottomLeftCorner(m, n) = b;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + m);
  rhs.tail(m) = g;
  return k.fullPivLu().solve(rhs).head(n);
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::VectorXd moments(const Kernel& k) { return to_vector(exact_moment_integrals(k)); }

std::vector<Kernel> paper_kernels(int d, double delta) {
  return {Kernel(KernelKind::constant, d, delta), Kernel(KernelKind::rational, d, delta)};
}

TEST(Offsets, OneDSinglePoint) {
  const auto set = generate_offsets({1, 1, 0.02});
  ASSERT_EQ(set.size(), 2u);
  EXPECT_DOUBLE_EQ(set.offsets[0][0], -0.01);
  EXPECT_DOUBLE_EQ(set.offsets[1][0], 0.01);
}

TEST(Offsets, OneDTwoPoints) {
  const double delta = 0.4;
  const auto set = generate_offsets({2, 1, delta});
  ASSERT_EQ(set.size(), 4u);
  const std::vector<double> expected{-0.75 * delta, -0.25 * delta, 0.25 * delta, 0.75 * delta};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(set.offsets[i][0], expected[i], 1e-16);
}

TEST(Offsets, TwoDCountAndSymmetry) {
  const auto set = generate_offsets({4, 2, 0.3});
  EXPECT_EQ(set.size(), 64u);
  for (const auto& o : set.offsets) {
    EXPECT_FALSE(o[0] == 0.0 && o[1] == 0.0);
    for (const Coord& m : {Coord{-o[0], o[1]}, Coord{o[0], -o[1]}, Coord{o[1], o[0]}}) {
      EXPECT_NE(std::find(set.offsets.begin(), set.offsets.end(), m), set.offsets.end());
    }
  }
}

TEST(Offsets, SpacingTimesCountIsDelta) {
  for (int n : {1, 3, 7, 10}) {
    const InnerGridSpec spec{n, 1, 0.37};
    EXPECT_DOUBLE_EQ(spec.spacing() * n, 0.37);
  }
  EXPECT_THROW(generate_offsets({0, 1, 0.1}), PreconditionError);
}

TEST(BallFilter, EuclideanKeepsFiftyTwo) {
  const auto set = filter_to_ball(generate_offsets({4, 2, 1.0}), BallNorm::euclidean);
  EXPECT_EQ(set.size(), 52u);
  int first_quadrant = 0;
  for (const auto& o : set.offsets) first_quadrant += o[0] > 0 && o[1] > 0;
  EXPECT_EQ(first_quadrant, 13);
}

TEST(BallFilter, MaxNormKeepsAll) {
  EXPECT_EQ(filter_to_ball(generate_offsets({4, 2, 1.0}), BallNorm::max).size(), 64u);
}

TEST(BallFilter, OneDKeepsAll) {
  for (int n = 1; n <= 10; ++n) {
    EXPECT_EQ(filter_to_ball(generate_offsets({n, 1, 0.5}), BallNorm::euclidean).size(),
              static_cast<std::size_t>(2 * n));
  }
}

TEST(Constraints, OneDConstantSinglePoint) {
  const double delta = 0.3;
  const Kernel k(KernelKind::constant, 1, delta);
  const std::vector<Coord> pts{{-delta / 2, 0}, {delta / 2, 0}};
  const auto b = constraint_matrix(k, {0.0, 0.0}, pts);
  ASSERT_EQ(b.rows(), 1);
  const double expected = 1.5 / std::pow(delta, 3) * delta * delta / 4.0;
  EXPECT_NEAR(b(0, 0), expected, 1e-14 * expected);
  EXPECT_NEAR(b(0, 1), expected, 1e-14 * expected);
}

TEST(Constraints, TwoDRowsAndMixedRow) {
  const Kernel k(KernelKind::rational, 2, 0.2);
  const std::vector<Coord> pts{{0.1, 0.0}, {0.05, 0.05}};
  const auto b = constraint_matrix(k, {0.0, 0.0}, pts);
  EXPECT_EQ(b.rows(), 3);
  EXPECT_EQ(b(1, 0), 0.0);
  EXPECT_GT(b(1, 1), 0.0);
}

TEST(Constraints, CoincidentPointRejected) {
  const Kernel k(KernelKind::constant, 1, 0.2);
  const std::vector<Coord> pts{{0.3, 0.0}};
  EXPECT_THROW(constraint_matrix(k, {0.3, 0.0}, pts), NumericalError);
}

TEST(SolveWeights, OneDConstantSinglePoint) {
  for (double delta : {0.02, 0.5}) {
    const auto rule = full_ball_rule(Kernel(KernelKind::constant, 1, delta), {1, 1, delta});
    ASSERT_EQ(rule.weights.size(), 2u);
    for (double w : rule.weights) EXPECT_NEAR(w, 4.0 * delta / 3.0, 1e-15);
    // Single-constraint minimal-norm identity w = g f / |f|^2.
    const double f = 1.5 / std::pow(delta, 3) * delta * delta / 4.0;
    EXPECT_NEAR(rule.weights[0], 1.0 * f / (2 * f * f), 1e-15);
  }
}

TEST(SolveWeights, OneDConstantTwoPoints) {
  const double delta = 0.1;
  const auto rule = full_ball_rule(Kernel(KernelKind::constant, 1, delta), {2, 1, delta});
  ASSERT_EQ(rule.weights.size(), 4u);
  EXPECT_NEAR(rule.weights[0], 72 * delta / 123, 1e-15);
  EXPECT_NEAR(rule.weights[1], 8 * delta / 123, 1e-15);
  EXPECT_NEAR(rule.weights[2], 8 * delta / 123, 1e-15);
  EXPECT_NEAR(rule.weights[3], 72 * delta / 123, 1e-15);
}

TEST(SolveWeights, DegenerateAndShapeErrors) {
  EXPECT_THROW(solve_weights(Eigen::MatrixXd::Zero(1, 3), Eigen::VectorXd::Ones(1)), NumericalError);
  EXPECT_THROW(solve_weights(Eigen::MatrixXd::Ones(1, 3), Eigen::VectorXd::Ones(2)),
               PreconditionError);
}

TEST(SolveWeights, PseudoinverseOnRankDeficientSystem) {
  // Duplicate rows: B B^T is singular, the pseudoinverse still gives the
  // minimal-norm solution of the consistent system.
  Eigen::MatrixXd b(2, 3);
  b << 1, 2, 3, 1, 2, 3;
  Eigen::VectorXd g(2);
  g << 2, 2;
  const auto sol = solve_weights(b, g);
  EXPECT_EQ(sol.rank, 1);
  const Eigen::Vector3d expected = b.row(0).transpose() * (2.0 / 14.0);
  EXPECT_LT((sol.weights - expected).norm(), 1e-14);
  EXPECT_LT(sol.residual, 1e-14);
}

TEST(SolveWeights, MatchesKktOracle) {
  for (int d : {1, 2}) {
    for (const auto& k : paper_kernels(d, 0.25)) {
      for (int n : {1, 2, 3, 4}) {
        const auto ball = filter_to_ball(generate_offsets({n, d, 0.25}), BallNorm::euclidean);
        const auto b = constraint_matrix(k, {0.0, 0.0}, ball.offsets);
        const auto sol = solve_weights(b, moments(k));
        const auto oracle = kkt_weights(b, moments(k));
        EXPECT_LT((sol.weights - oracle).norm(), 1e-12 * oracle.norm()) << "d=" << d << " n=" << n;
      }
    }
  }
}

TEST(SolveWeights, MinimalNormAgainstFeasibleAlternatives) {
  Xoshiro256pp rng(17);
  for (int d : {1, 2}) {
    for (const auto& k : paper_kernels(d, 1.0)) {
      const auto ball = filter_to_ball(generate_offsets({3, d, 1.0}), BallNorm::euclidean);
      const auto b = constraint_matrix(k, {0.0, 0.0}, ball.offsets);
      const auto w = solve_weights(b, moments(k)).weights;
      // Alternatives: w + (I - pinv(B) B) z stays feasible.
      const Eigen::MatrixXd pinv = b.completeOrthogonalDecomposition().pseudoInverse();
      const Eigen::MatrixXd proj = Eigen::MatrixXd::Identity(b.cols(), b.cols()) - pinv * b;
      for (int trial = 0; trial < 50; ++trial) {
        Eigen::VectorXd z(b.cols());
        for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.uniform_pm1();
        const Eigen::VectorXd alt = w + proj * z;
        EXPECT_LT((b * alt - moments(k)).norm(), 1e-10 * moments(k).norm());
        EXPECT_LE(w.norm(), alt.norm() * (1 + 1e-14));
      }
    }
  }
}

TEST(FullBall, DihedralSymmetryInTwoD) {
  for (const auto& k : paper_kernels(2, 0.2)) {
    const auto rule = full_ball_rule(k, {4, 2, 0.2});
    std::map<std::pair<long, long>, double> by_offset;
    auto key = [](const Coord& o) {
      return std::pair<long, long>{std::lround(o[0] * 1e12), std::lround(o[1] * 1e12)};
    };
    for (std::size_t i = 0; i < rule.points.size(); ++i) by_offset[key(rule.points[i])] = rule.weights[i];
    for (std::size_t i = 0; i < rule.points.size(); ++i) {
      const Coord& o = rule.points[i];
      for (const Coord& m : {Coord{-o[0], o[1]}, Coord{o[0], -o[1]}, Coord{o[1], o[0]},
                             Coord{-o[1], -o[0]}}) {
        ASSERT_TRUE(by_offset.count(key(m)));
        EXPECT_NEAR(by_offset[key(m)], rule.weights[i], 1e-14 * rule.weights[i]);
      }
    }
  }
}

TEST(FullBall, ExactnessPositivityAndReflection) {
  for (int d : {1, 2}) {
    for (auto norm : {BallNorm::euclidean, BallNorm::max}) {
      for (auto kind : {KernelKind::constant, KernelKind::rational}) {
        for (int n = 1; n <= 10; ++n) {
          const double delta = 0.05;
          const Kernel k(kind, d, delta, std::nullopt, norm);
          const auto rule = full_ball_rule(k, {n, d, delta});
          const auto b = constraint_matrix(k, {0.0, 0.0}, rule.points);
          const Eigen::VectorXd g = moments(k);
          const Eigen::VectorXd r = b * to_vector(rule.weights) - g;
          for (Eigen::Index i = 0; i < g.size(); ++i) {
            EXPECT_LE(std::abs(r(i)), 1e-12 * g.norm()) << "n=" << n << " d=" << d;
          }
          const std::size_t np = rule.points.size();
          for (std::size_t i = 0; i < np; ++i) {
            EXPECT_GT(rule.weights[i], 0.0);
            // Offsets are generated in lexicographic order, so reflection
            // through the center reverses the list.
            EXPECT_EQ(rule.points[np - 1 - i][0], -rule.points[i][0]);
            EXPECT_NEAR(rule.weights[np - 1 - i], rule.weights[i], 1e-14 * rule.weights[i]);
          }
        }
      }
    }
  }
}

TEST(FullBall, ScalesLikeDeltaToTheD) {
  for (int d : {1, 2}) {
    for (auto kind : {KernelKind::constant, KernelKind::rational}) {
      const double lambda = 3.7;
      const auto a = full_ball_rule(Kernel(kind, d, 0.1), {4, d, 0.1});
      const auto b = full_ball_rule(Kernel(kind, d, 0.1 * lambda), {4, d, 0.1 * lambda});
      ASSERT_EQ(a.weights.size(), b.weights.size());
      for (std::size_t i = 0; i < a.weights.size(); ++i) {
        EXPECT_NEAR(b.weights[i], std::pow(lambda, d) * a.weights[i], 1e-13 * b.weights[i]);
      }
    }
  }
}

TEST(FullBall, SharedAcrossCentersAndCounted) {
  const Kernel k(KernelKind::rational, 1, 0.1);
  const InnerGridSpec spec{5, 1, 0.1};
  InnerRuleCache cache(k, spec);
  const BoxDomain box = BoxDomain::unit(1, 0.1);
  const MaskedWeights& a = cache.rule_for_center({0.3, 0.0}, box, 0.0);
  const MaskedWeights& b = cache.rule_for_center({0.71, 0.0}, box, 0.0);
  EXPECT_EQ(&a, &b);
  EXPECT_EQ(&a, &cache.full_ball());
  const auto stats = cache.stats();
  EXPECT_EQ(stats.full_solves, 1u);
  EXPECT_EQ(stats.full_requests, 3u);
}

TEST(FullBall, ConcurrentRequestsAgree) {
  const Kernel k(KernelKind::constant, 2, 0.1);
  InnerRuleCache cache(k, {4, 2, 0.1});
  const BoxDomain box = BoxDomain::unit(2, 0.1);
  std::vector<const MaskedWeights*> seen(8 * 50);
  std::vector<std::thread> pool;
  for (int t = 0; t < 8; ++t) {
    pool.emplace_back([&, t] {
      for (int i = 0; i < 50; ++i) {
        const double s = (i % 10) * 0.01;
        seen[t * 50 + i] = &cache.rule_for_center({-0.1 + s, 0.3 + 0.01 * t}, box, 0.0);
      }
    });
  }
  for (auto& th : pool) th.join();
  // Same center pattern from every thread gives the same rule object.
  for (int t = 1; t < 8; ++t) {
    for (int i = 0; i < 50; ++i) EXPECT_EQ(seen[t * 50 + i]->weights, seen[i]->weights);
  }
}

TEST(Truncated, ExtensionDeltaUsesFullBallWeights) {
  const double delta = 0.1;
  const Kernel k(KernelKind::rational, 1, delta);
  const InnerGridSpec spec{5, 1, delta};
  const Mesh mesh = build_uniform_mesh_1d(0.05, BoxDomain::unit(1, delta));
  const auto full = full_ball_rule(k, spec);
  for (double c : {-0.099, -0.07, -0.031, -0.015, 1.02, 1.0999}) {
    const auto rule = truncated_ball_rule(k, {c, 0.0}, mesh, delta, spec);
    EXPECT_FALSE(rule.full_ball);
    std::size_t matched = 0;
    for (std::size_t i = 0; i < rule.points.size(); ++i) {
      EXPECT_GE(rule.points[i][0], -delta);
      EXPECT_LE(rule.points[i][0], 1.0 + delta);
      for (std::size_t j = 0; j < full.points.size(); ++j) {
        if (std::abs(c + full.points[j][0] - rule.points[i][0]) < 1e-15) {
          EXPECT_EQ(rule.weights[i], full.weights[j]);
          ++matched;
        }
      }
    }
    EXPECT_EQ(matched, rule.points.size());
    EXPECT_LT(rule.points.size(), full.points.size());
  }
}

TEST(Truncated, NoExtensionMatchesReducedKkt) {
  const double delta = 0.2;
  const Kernel k(KernelKind::constant, 1, delta);
  const InnerGridSpec spec{4, 1, delta};
  const Mesh mesh = build_uniform_mesh_1d(0.1, BoxDomain::unit(1, delta));
  const double c = -delta + delta / 2;
  const auto rule = truncated_ball_rule(k, {c, 0.0}, mesh, 0.0, spec);
  // Inward offsets plus those reaching at most delta/2 outward.
  std::vector<Coord> kept;
  for (const auto& o : generate_offsets(spec).offsets) {
    if (o[0] >= -delta / 2) kept.push_back({c + o[0], 0.0});
  }
  ASSERT_EQ(rule.points.size(), kept.size());
  const auto b = constraint_matrix(k, {c, 0.0}, kept);
  const Eigen::VectorXd oracle = kkt_weights(b, moments(k));
  const auto full = full_ball_rule(k, spec);
  double diff = 0.0;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    EXPECT_NEAR(rule.points[i][0], kept[i][0], 1e-15);
    EXPECT_NEAR(rule.weights[i], oracle(static_cast<Eigen::Index>(i)), 1e-12 * oracle.norm());
    diff = std::max(diff, std::abs(rule.weights[i] - full.weights[i + full.points.size() - kept.size()]));
  }
  EXPECT_GT(diff, 1e-3 * delta);
}

TEST(Truncated, CenterInOmegaGetsFullBall) {
  const double delta = 0.1;
  const Kernel k(KernelKind::constant, 2, delta);
  const InnerGridSpec spec{4, 2, delta};
  const Mesh mesh = build_uniform_mesh_2d(0.05, BoxDomain::unit(2, delta));
  const auto full = full_ball_rule(k, spec);
  for (double t_e : {0.0, delta}) {
    const auto rule = truncated_ball_rule(k, {0.01, 0.99}, mesh, t_e, spec);
    EXPECT_TRUE(rule.full_ball);
    EXPECT_EQ(rule.weights, full.weights);
    EXPECT_EQ(rule.points, full.points);
  }
}

TEST(Truncated, ExactBeforeDiscard) {
  for (int d : {1, 2}) {
    const double delta = 0.1;
    for (const auto& k : paper_kernels(d, delta)) {
      const InnerGridSpec spec{4, d, delta};
      InnerRuleCache cache(k, spec);
      const BoxDomain box = BoxDomain::unit(d, delta);
      const Eigen::VectorXd g = moments(k);
      for (double t_e : {0.0, 0.5 * delta}) {
        for (double c : {-0.095, -0.06, -0.02}) {
          const Coord center{c, d == 2 ? c * 0.7 : 0.0};
          const MaskedWeights& w = cache.rule_for_center(center, box, t_e);
          std::vector<Coord> pts;
          for (int p : w.offset_index) pts.push_back(cache.ball_offsets().offsets[p]);
          const auto b = constraint_matrix(k, {0.0, 0.0}, pts);
          EXPECT_LE((b * to_vector(w.weights) - g).norm(), 1e-12 * g.norm());
          EXPECT_LE(w.residual, 1e-12 * g.norm());
        }
      }
      EXPECT_GT(cache.stats().truncated_solves, 0u);
    }
  }
}

TEST(Truncated, CacheReusesMasks) {
  const double delta = 0.1;
  const Kernel k(KernelKind::rational, 1, delta);
  InnerRuleCache cache(k, {5, 1, delta});
  const BoxDomain box = BoxDomain::unit(1, delta);
  // Both centers lose only the outermost left offset.
  const MaskedWeights& a = cache.rule_for_center({-0.02, 0.0}, box, 0.0);
  const MaskedWeights& b = cache.rule_for_center({-0.021, 0.0}, box, 0.0);
  EXPECT_EQ(&a, &b);
  EXPECT_EQ(cache.stats().truncated_solves, 1u);
  EXPECT_EQ(cache.stats().truncated_requests, 2u);
}

TEST(ClosedForm, SmallCases) {
  const double delta = 0.3;
  const auto w1 = closed_form_weights_1d_constant(1, delta);
  ASSERT_EQ(w1.size(), 2u);
  EXPECT_NEAR(w1[0], 4 * delta / 3, 1e-15);
  const auto w2 = closed_form_weights_1d_constant(2, delta);
  EXPECT_NEAR(w2[1], 8 * delta / 123, 1e-15);
  EXPECT_NEAR(w2[0], 72 * delta / 123, 1e-15);
}

TEST(ClosedForm, PositiveAndMinimumFormula) {
  for (int n = 1; n <= 20; ++n) {
    const double delta = 0.01;
    const auto w = closed_form_weights_1d_constant(n, delta);
    const double nn = n;
    const double min_expected = 20 * delta * nn / (7 - 40 * nn * nn + 48 * nn * nn * nn * nn);
    EXPECT_NEAR(*std::min_element(w.begin(), w.end()), min_expected, 1e-16);
    for (double x : w) EXPECT_GT(x, 0.0);
    const auto solved = full_ball_rule(Kernel(KernelKind::constant, 1, delta), {n, 1, delta});
    for (std::size_t i = 0; i < w.size(); ++i) {
      EXPECT_NEAR(solved.weights[i], w[i], 1e-12 * w[i]) << "n=" << n;
    }
  }
}

TEST(RuleDump, HeaderAndRows) {
  const auto rule = full_ball_rule(Kernel(KernelKind::constant, 1, 0.1), {1, 1, 0.1});
  std::ostringstream out;
  write_rule_csv(rule, 1, out);
  const std::string text = out.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "offset_x,weight");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
}

}  // namespace
}  // namespace nlfem
