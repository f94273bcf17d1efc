#pragma once

#include <complex>
#include <cstddef>

#include "evdeblur/tensor.hpp"

// Raw loops underneath the tensor ops. Every routine partitions work by
// output element, so results do not depend on the thread count.
namespace evdeblur::kernels {

struct ConvGeometry {
  int in_channels = 0;
  int in_h = 0;
  int in_w = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int pad = 0;
  int out_h = 0;
  int out_w = 0;

  int taps() const { return kernel * kernel; }
  int col_rows() const { return in_channels * kernel * kernel; }
  int out_plane() const { return out_h * out_w; }
  bool is_pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

/// Validates x (C×H×W) against weight (Cout×Cin×k×k) and derives the output size.
ConvGeometry conv_geometry(const Shape& x, const Shape& weight, int stride, int pad);

// C[M×N] += A[M×K]·B[K×N]
template <typename T>
void gemm_nn(int M, int N, int K, const T* A, const T* B, T* C);
// C[M×K] += A[M×N]·B[K×N]ᵀ
template <typename T>
void gemm_nt(int M, int N, int K, const T* A, const T* B, T* C);
// C[K×N] += A[M×K]ᵀ·B[M×N]
template <typename T>
void gemm_tn(int M, int N, int K, const T* A, const T* B, T* C);

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols);
template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* gx);

/// Zero-padded bilinear read of one H×W plane at fractional (row, col).
template <typename T>
T bilinear(const T* plane, int H, int W, T row, T col);

// Offsets are (2·k·k)×out_h×out_w; channel 2·tap holds the row shift and
// 2·tap+1 the column shift of kernel tap `tap` = ki·k + kj.
template <typename T>
void deform_im2col(const T* x, const T* offset, const ConvGeometry& g, T* cols);
template <typename T>
void deform_col2im_add(const T* gcols, const T* offset, const ConvGeometry& g, T* gx);
template <typename T>
void deform_col2offset_add(const T* gcols, const T* x, const T* offset, const ConvGeometry& g, T* goffset);

/// out[c] = Σ_j rows[c·N + j], one output per row.
template <typename T>
void row_sums_add(int rows, int N, const T* data, T* out);

// 2-D real transforms over C planes. Forward is unnormalized; the inverse
// applies 1/(H·W) and reads W/2+1 bins per row.
template <typename T>
void rfft2(const T* x, int C, int H, int W, std::complex<T>* out);
template <typename T>
void irfft2(const std::complex<T>* in, int C, int H, int W, T* out);

}  // namespace evdeblur::kernels
