#include "evdeblur/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "evdeblur/error.hpp"

namespace evdeblur {

namespace {

// Roundoff in one objective evaluation, in units of eps·max(|f|, 1).
constexpr double kRoundoffFactor = 16.0;

void require_eps(double eps) {
  require(eps > 0.0 && eps <= 1e-3, "grad_check: eps must lie in (0, 1e-3], got " + std::to_string(eps));
}

void record(GradCheckReport& r, std::size_t index, double analytic, double numeric) {
  ++r.coordinates;
  const double e = grad_rel_error(analytic, numeric);
  if (e > r.max_rel_error) {
    r.max_rel_error = e;
    r.worst_index = index;
  }
}

void mark_nonfinite(GradCheckReport& r, std::size_t index) {
  r.finite = false;
  r.nonfinite_index = index;
  r.message = "non-finite objective while probing coordinate " + std::to_string(index);
}

}  // namespace

double grad_rel_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const std::function<double(std::span<const double>)>& f, std::vector<double> theta,
                           std::span<const double> analytic, double eps) {
  require_eps(eps);
  require(analytic.size() == theta.size(), "grad_check: analytic gradient has " + std::to_string(analytic.size()) +
                                               " entries for " + std::to_string(theta.size()) + " coordinates");
  GradCheckReport r;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double saved = theta[i];
    theta[i] = saved + eps;
    const double fp = f(theta);
    theta[i] = saved - eps;
    const double fm = f(theta);
    theta[i] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      mark_nonfinite(r, i);
      return r;
    }
    record(r, i, analytic[i], (fp - fm) / (2.0 * eps));
  }
  return r;
}

GradCheckReport grad_check(const std::function<Var<double>()>& f, const std::vector<Var<double>>& wrt,
                           const GradCheckOptions& options) {
  require_eps(options.eps);
  require(options.step_search >= 0, "grad_check: step_search must be non-negative");
  for (const auto& v : wrt) require(v.requires_grad(), "grad_check: every probed leaf must require grad");

  std::vector<Var<double>> leaves = wrt;
  for (auto& v : leaves) v.zero_grad();
  Var<double> out = f();
  require(out.size() == 1, "grad_check: objective must be scalar, got " + shape_str(out.shape()));
  GradCheckReport r;
  if (!std::isfinite(out.value()[0])) {
    mark_nonfinite(r, 0);
    return r;
  }
  const double f0 = out.value()[0];
  const double f_scale = std::max(std::abs(f0), 1.0);
  backward(out);
  out = Var<double>();

  std::mt19937_64 rng(options.seed);
  std::size_t base = 0;
  for (auto& leaf : leaves) {
    const std::size_t n = leaf.size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_tensor > 0 && n > options.max_coords_per_tensor) {
      for (std::size_t i = 0; i < options.max_coords_per_tensor; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
        std::swap(coords[i], coords[j]);
      }
      coords.resize(options.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    const Tensor<double> grad = leaf.grad().empty() ? Tensor<double>(leaf.shape()) : leaf.grad();
    for (std::size_t i : coords) {
      double& slot = leaf.mutable_value()[i];
      const double saved = slot;
      struct Probe {
        double step, central, curvature;  // curvature: |f(θ+h) + f(θ−h) − 2f(θ)|
      };
      auto probe = [&](double h) {
        slot = saved + h;
        const double fp = f().value()[0];
        slot = saved - h;
        const double fm = f().value()[0];
        slot = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm)) return Probe{h, std::nan(""), 0.0};
        return Probe{h, (fp - fm) / (2.0 * h), std::abs(fp + fm - 2.0 * f0)};
      };
      // Central differences at eps, eps/10, ...; without a search this is the plain estimate at eps.
      //
      // With a search, a step is dropped as kinked when its second difference does not shrink
      // quadratically into the next step's (ratio ~100 on smooth ground, ~10 or a sudden collapse
      // across a kink). Each remaining central estimate c_k, and each Richardson pair
      // R_k = c_{k+1} + (c_{k+1} − c_k)/99 over two clean steps, is scored by its disagreement with
      // the next finer one plus the finer step's roundoff floor; the lowest score wins. The
      // analytic value is never consulted.
      std::vector<Probe> pr{probe(options.eps)};
      for (int j = 0; j < options.step_search && std::isfinite(pr.back().central); ++j)
        pr.push_back(probe(pr.back().step / 10.0));
      if (!std::all_of(pr.begin(), pr.end(), [](const Probe& p) { return std::isfinite(p.central); })) {
        mark_nonfinite(r, base + i);
        return r;
      }
      const double ulp_f = kRoundoffFactor * std::numeric_limits<double>::epsilon() * f_scale;
      auto noise = [&](std::size_t k) { return ulp_f / pr[k].step; };
      const std::size_t K = pr.size();
      std::vector<bool> kinked(K, false);
      for (std::size_t k = 0; k + 1 < K; ++k) {
        const double sk = pr[k].curvature, sn = pr[k + 1].curvature, floor = 4.0 * ulp_f;
        if (sk <= floor) continue;
        kinked[k] = sn <= floor ? sk > 400.0 * floor : (sk < 25.0 * sn || sk > 400.0 * sn);
      }
      double numeric = pr.back().central;
      double best = std::numeric_limits<double>::infinity();
      auto consider = [&](double value, double err) {
        if (err < best) {
          best = err;
          numeric = value;
        }
      };
      std::vector<double> rich(K, std::nan(""));
      for (std::size_t k = 0; k + 1 < K; ++k) {
        if (kinked[k]) continue;
        consider(pr[k].central, std::abs(pr[k].central - pr[k + 1].central) + noise(k));
        if (!kinked[k + 1]) rich[k] = pr[k + 1].central + (pr[k + 1].central - pr[k].central) / 99.0;
      }
      for (std::size_t k = 0; k + 2 < K; ++k) {
        if (std::isfinite(rich[k]) && std::isfinite(rich[k + 1]))
          consider(rich[k], std::abs(rich[k] - rich[k + 1]) + noise(k + 1));
      }
      record(r, base + i, grad[i], numeric);
    }
    base += n;
  }
  return r;
}

}  // namespace evdeblur
