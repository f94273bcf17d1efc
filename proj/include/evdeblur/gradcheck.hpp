#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "evdeblur/autograd.hpp"

namespace evdeblur {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;  // flat coordinate with the largest error
  std::size_t coordinates = 0;  // coordinates actually probed
  bool finite = true;
  std::size_t nonfinite_index = 0;
  std::string message;

  bool passed(double tol) const { return finite && max_rel_error <= tol; }
};

/// Relative error with the floor used throughout the suite.
double grad_rel_error(double analytic, double numeric);

/// Central differences of `f` at `theta` against a supplied analytic gradient.
/// eps must lie in (0, 1e-3].
GradCheckReport grad_check(const std::function<double(std::span<const double>)>& f, std::vector<double> theta,
                           std::span<const double> analytic, double eps = 1e-6);

struct GradCheckOptions {
  double eps = 1e-6;
  // Probe at most this many coordinates per tensor (0 = every coordinate).
  // Probed coordinates are drawn without replacement from `seed`.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 1;
  // Extra decades of step size to try below eps (0 = plain central difference at eps).
  int step_search = 0;
};

/// Checks the adjoint of a scalar graph `f` with respect to the leaves `wrt`.
/// `f` must rebuild the graph from the current leaf values on every call.
GradCheckReport grad_check(const std::function<Var<double>()>& f, const std::vector<Var<double>>& wrt,
                           const GradCheckOptions& options = {});

}  // namespace evdeblur
