#pragma once

#include <vector>

namespace nlfem {

/// Gauss-Legendre nodes and weights on [0, 1].
struct GaussRule1d {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// n-point Gauss-Legendre rule mapped to [0, 1]; exact for degree 2n-1.
/// Results are memoized per n (thread-safe).
const GaussRule1d& gauss_legendre01(int n);

}  // namespace nlfem
