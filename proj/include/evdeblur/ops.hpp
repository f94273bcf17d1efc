#pragma once

#include <complex>
#include <vector>

#include "evdeblur/autograd.hpp"
#include "evdeblur/tensor.hpp"

namespace evdeblur {

// ---------------------------------------------------------------------------
// Plain tensor operations
// ---------------------------------------------------------------------------

/// Cross-correlation parameters. An empty `bias` means no bias term.
template <typename T>
struct ConvParams {
  Tensor<T> weight;  // C_out×C_in×k×k
  Tensor<T> bias;    // C_out, or empty
  int stride = 1;
  int padding = -1;  // -1 selects "same" padding (k-1)/2

  int kernel() const { return weight.ndim() == 4 ? weight.dim(2) : 0; }
  int resolved_padding() const { return padding < 0 ? (kernel() - 1) / 2 : padding; }
  void validate() const;
};

/// Per-output-location sampling shifts for a deformable convolution, shaped
/// (2·k·k)×H_out×W_out in pixels. Channel 2·tap is the row shift, 2·tap+1 the column shift.
template <typename T>
struct OffsetField {
  Tensor<T> offsets;
};

enum class Activation { sigmoid, tanh, relu };

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p);

/// Bilinear read of channel `c` at column `px`, row `py`; taps outside the image read zero.
template <typename T>
T bilinear_sample(const Tensor<T>& x, T px, T py, int c);

template <typename T>
Tensor<T> deformable_conv2d(const Tensor<T>& x, const ConvParams<T>& p, const OffsetField<T>& off);

template <typename T>
Tensor<T> elementwise(Activation kind, const Tensor<T>& x);

/// Per-channel spatial mean of a C×H×W tensor, shaped (C).
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// Wx + b for x (in), W (out×in), b (out).
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>& b);

/// Half spectrum of a real C×H×W tensor: C×H×(W/2+1) bins, unnormalized.
template <typename T>
struct Spectrum {
  int channels = 0;
  int height = 0;
  int width = 0;  // spatial width of the source signal
  std::vector<std::complex<T>> bins;

  int bins_per_row() const { return width / 2 + 1; }
  std::complex<T>& at(int c, int k, int l) {
    return bins[(static_cast<std::size_t>(c) * height + k) * bins_per_row() + l];
  }
  const std::complex<T>& at(int c, int k, int l) const {
    return bins[(static_cast<std::size_t>(c) * height + k) * bins_per_row() + l];
  }
};

template <typename T>
Spectrum<T> rfft2(const Tensor<T>& x);

/// Inverse of rfft2 with 1/(H·W) normalization; `dims` is the target C×H×W.
template <typename T>
Tensor<T> irfft2(const Spectrum<T>& spec, const Shape& dims);

// ---------------------------------------------------------------------------
// Differentiable operations on graph values
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T factor);
template <typename T>
Var<T> add_scalar(const Var<T>& a, T value);
/// Scalar var (single element) times a tensor.
template <typename T>
Var<T> scalar_mul(const Var<T>& w, const Var<T>& x);
/// x (C×H×W) scaled per channel by a (C).
template <typename T>
Var<T> channel_mul(const Var<T>& x, const Var<T>& a);
/// x (C×H×W) scaled per pixel by s (1×H×W).
template <typename T>
Var<T> spatial_mul(const Var<T>& x, const Var<T>& s);

template <typename T>
Var<T> activation(Activation kind, const Var<T>& x);
template <typename T>
Var<T> sigmoid(const Var<T>& x) { return activation(Activation::sigmoid, x); }
template <typename T>
Var<T> tanh(const Var<T>& x) { return activation(Activation::tanh, x); }
template <typename T>
Var<T> relu(const Var<T>& x) { return activation(Activation::relu, x); }

/// `bias` may be empty (no bias).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad);
template <typename T>
Var<T> deformable_conv2d(const Var<T>& x, const Var<T>& offset, const Var<T>& weight, const Var<T>& bias,
                         int stride, int pad);

template <typename T>
Var<T> global_avg_pool(const Var<T>& x);
template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& W, const Var<T>& b);

/// rfft2 packed as real channels then imaginary channels: (2C)×H×(W/2+1).
template <typename T>
Var<T> rfft2(const Var<T>& x);
/// Inverse of the packed spectrum back to C×H×width.
template <typename T>
Var<T> irfft2(const Var<T>& packed, int width);

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> slice_channels(const Var<T>& x, int begin, int count);

/// 2×H×W stack of the channel-wise max and mean.
template <typename T>
Var<T> channel_max_mean(const Var<T>& x);

/// Half-pixel-centred bilinear resize (edge clamped).
template <typename T>
Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w);
/// Box-filter downsampling by an integer factor dividing H and W.
template <typename T>
Var<T> area_downsample(const Var<T>& x, int factor);
/// Reflect padding on the bottom and right edges.
template <typename T>
Var<T> reflect_pad(const Var<T>& x, int pad_bottom, int pad_right);
/// Keeps the top-left out_h×out_w window.
template <typename T>
Var<T> crop(const Var<T>& x, int out_h, int out_w);

template <typename T>
Var<T> sum(const Var<T>& x);
template <typename T>
Var<T> mean(const Var<T>& x);
/// Σ w⊙x for a constant weight tensor w.
template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights);

}  // namespace evdeblur
