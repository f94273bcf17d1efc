#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evdeblur/gradcheck.hpp"
#include "evdeblur/tensor.hpp"

namespace evdeblur {

struct CheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t coordinates = 0;
  double seconds = 0.0;
  bool passed = false;
  std::string detail;
};

/// Random 64-bit tensor with entries uniform in [lo, hi).
Tensor<double> random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0);

/// Adjoint-vs-finite-difference checks for every differentiable building
/// block and the small full network, all at 64-bit.
std::vector<CheckResult> run_gradient_suite(std::uint64_t seed = 7);

}  // namespace evdeblur
