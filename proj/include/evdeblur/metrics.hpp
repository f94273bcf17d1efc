#pragma once

#include <vector>

#include "evdeblur/autograd.hpp"
#include "evdeblur/tensor.hpp"

namespace evdeblur {

struct LossConfig {
  double ssim_weight = 0.5;
  int window = 11;
  double sigma = 1.5;
  double range = 1.0;  // dynamic range R for the SSIM stabilizers

  double c1() const { return (0.01 * range) * (0.01 * range); }
  double c2() const { return (0.03 * range) * (0.03 * range); }
  void validate() const;
};

/// Mean absolute difference.
template <typename T>
Var<T> l1_loss(const Var<T>& a, const Var<T>& b);

/// Mean local SSIM over the valid window positions, averaged over channels.
template <typename T>
Var<T> ssim(const Var<T>& a, const Var<T>& b, const LossConfig& cfg);

/// Mean over scales of l1 + λ·(1 − ssim).
template <typename T>
Var<T> hybrid_loss(const std::vector<Var<T>>& outputs, const std::vector<Var<T>>& targets, const LossConfig& cfg);

template <typename T>
double l1_loss(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const LossConfig& cfg);

constexpr double kPsnrCap = 99.0;

/// 10·log10(peak²/MSE), capped at kPsnrCap (identical inputs report the cap).
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0);

/// Area-downsampled copies of `sharp`, coarsest first, matching the network outputs.
template <typename T>
std::vector<Tensor<T>> image_pyramid(const Tensor<T>& sharp, int levels);

}  // namespace evdeblur
