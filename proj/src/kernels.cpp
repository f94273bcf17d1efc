#include "evdeblur/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace evdeblur::kernels {

namespace {
constexpr long kParallelGrain = 1 << 14;
}

ConvGeometry conv_geometry(const Shape& x, const Shape& w, int stride, int pad) {
  require(x.size() == 3, "conv: input must be C×H×W, got " + shape_str(x));
  require(w.size() == 4, "conv: weight must be Cout×Cin×k×k, got " + shape_str(w));
  require(w[2] == w[3], "conv: kernel must be square, got " + shape_str(w));
  require(w[2] % 2 == 1, "conv: kernel size must be odd, got " + std::to_string(w[2]));
  require(stride >= 1, "conv: stride must be >= 1");
  require(pad >= 0, "conv: padding must be >= 0");
  require(x[0] == w[1], "conv: input channel dim " + std::to_string(x[0]) + " != weight C_in " +
                            std::to_string(w[1]));
  ConvGeometry g;
  g.in_channels = x[0];
  g.in_h = x[1];
  g.in_w = x[2];
  g.out_channels = w[0];
  g.kernel = w[2];
  g.stride = stride;
  g.pad = pad;
  require(g.in_h + 2 * pad >= g.kernel, "conv: height dim " + std::to_string(g.in_h) +
                                            " smaller than kernel after padding");
  require(g.in_w + 2 * pad >= g.kernel, "conv: width dim " + std::to_string(g.in_w) +
                                            " smaller than kernel after padding");
  g.out_h = (g.in_h + 2 * pad - g.kernel) / stride + 1;
  g.out_w = (g.in_w + 2 * pad - g.kernel) / stride + 1;
  return g;
}

template <typename T>
void gemm_nn(int M, int N, int K, const T* A, const T* B, T* C) {
  constexpr int kBlock = 512;
  for (int j0 = 0; j0 < N; j0 += kBlock) {
    const int j1 = std::min(N, j0 + kBlock);
#pragma omp parallel for schedule(static) if (static_cast<long>(M) * N * K > kParallelGrain)
    for (int i = 0; i < M; ++i) {
      T* c = C + static_cast<std::size_t>(i) * N;
      const T* a = A + static_cast<std::size_t>(i) * K;
      for (int k = 0; k < K; ++k) {
        const T av = a[k];
        if (av == T(0)) continue;
        const T* b = B + static_cast<std::size_t>(k) * N;
        for (int j = j0; j < j1; ++j) c[j] += av * b[j];
      }
    }
  }
}

namespace {
// Fixed-order dot product with eight interleaved partial sums; the
// compiler maps the accumulators onto vector lanes.
template <typename T>
T dot(const T* a, const T* b, int n) {
  T acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int j = 0;
  for (; j + 8 <= n; j += 8) {
    for (int l = 0; l < 8; ++l) acc[l] += a[j + l] * b[j + l];
  }
  T tail = 0;
  for (; j < n; ++j) tail += a[j] * b[j];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}
}  // namespace

template <typename T>
void gemm_nt(int M, int N, int K, const T* A, const T* B, T* C) {
#pragma omp parallel for schedule(static) if (static_cast<long>(M) * N * K > kParallelGrain)
  for (int i = 0; i < M; ++i) {
    const T* a = A + static_cast<std::size_t>(i) * N;
    T* c = C + static_cast<std::size_t>(i) * K;
    for (int k = 0; k < K; ++k) c[k] += dot(a, B + static_cast<std::size_t>(k) * N, N);
  }
}

template <typename T>
void gemm_tn(int M, int N, int K, const T* A, const T* B, T* C) {
#pragma omp parallel for schedule(static) if (static_cast<long>(M) * N * K > kParallelGrain)
  for (int k = 0; k < K; ++k) {
    T* c = C + static_cast<std::size_t>(k) * N;
    for (int i = 0; i < M; ++i) {
      const T av = A[static_cast<std::size_t>(i) * K + k];
      if (av == T(0)) continue;
      const T* b = B + static_cast<std::size_t>(i) * N;
      for (int j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const int rows = g.col_rows();
  const int plane = g.out_plane();
#pragma omp parallel for schedule(static) if (static_cast<long>(rows) * plane > kParallelGrain)
  for (int r = 0; r < rows; ++r) {
    const int c = r / g.taps();
    const int ki = (r % g.taps()) / g.kernel;
    const int kj = r % g.kernel;
    const T* src = x + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    T* dst = cols + static_cast<std::size_t>(r) * plane;
    for (int oh = 0; oh < g.out_h; ++oh) {
      const int ih = oh * g.stride - g.pad + ki;
      T* d = dst + static_cast<std::size_t>(oh) * g.out_w;
      if (ih < 0 || ih >= g.in_h) {
        std::fill(d, d + g.out_w, T(0));
        continue;
      }
      const T* s = src + static_cast<std::size_t>(ih) * g.in_w;
      if (g.stride == 1) {
        const int shift = kj - g.pad;
        const int lo = std::min(g.out_w, std::max(0, -shift));
        const int hi = std::max(lo, std::min(g.out_w, g.in_w - shift));
        std::fill(d, d + lo, T(0));
        for (int ow = lo; ow < hi; ++ow) d[ow] = s[ow + shift];
        std::fill(d + hi, d + g.out_w, T(0));
      } else {
        for (int ow = 0; ow < g.out_w; ++ow) {
          const int iw = ow * g.stride - g.pad + kj;
          d[ow] = (iw >= 0 && iw < g.in_w) ? s[iw] : T(0);
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* gx) {
  const int plane = g.out_plane();
#pragma omp parallel for schedule(static) if (static_cast<long>(g.col_rows()) * plane > kParallelGrain)
  for (int c = 0; c < g.in_channels; ++c) {
    T* dst = gx + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int t = 0; t < g.taps(); ++t) {
      const int ki = t / g.kernel;
      const int kj = t % g.kernel;
      const T* src = cols + (static_cast<std::size_t>(c) * g.taps() + t) * plane;
      for (int oh = 0; oh < g.out_h; ++oh) {
        const int ih = oh * g.stride - g.pad + ki;
        if (ih < 0 || ih >= g.in_h) continue;
        T* d = dst + static_cast<std::size_t>(ih) * g.in_w;
        const T* s = src + static_cast<std::size_t>(oh) * g.out_w;
        for (int ow = 0; ow < g.out_w; ++ow) {
          const int iw = ow * g.stride - g.pad + kj;
          if (iw >= 0 && iw < g.in_w) d[iw] += s[ow];
        }
      }
    }
  }
}

template <typename T>
T bilinear(const T* plane, int H, int W, T row, T col) {
  if (!(row > T(-1) && row < T(H) && col > T(-1) && col < T(W))) return T(0);
  const T fr = std::floor(row);
  const T fc = std::floor(col);
  const int r0 = static_cast<int>(fr);
  const int c0 = static_cast<int>(fc);
  const T lr = row - fr;
  const T lc = col - fc;
  const T hr = T(1) - lr;
  const T hc = T(1) - lc;
  auto at = [&](int r, int c) -> T {
    return (r >= 0 && r < H && c >= 0 && c < W) ? plane[static_cast<std::size_t>(r) * W + c] : T(0);
  };
  return hr * hc * at(r0, c0) + hr * lc * at(r0, c0 + 1) + lr * hc * at(r0 + 1, c0) +
         lr * lc * at(r0 + 1, c0 + 1);
}

namespace {

template <typename T>
struct TapSample {
  T row;
  T col;
};

template <typename T>
TapSample<T> tap_position(const T* offset, const ConvGeometry& g, int tap, int pos) {
  const int plane = g.out_plane();
  const int oh = pos / g.out_w;
  const int ow = pos % g.out_w;
  const int ki = tap / g.kernel;
  const int kj = tap % g.kernel;
  const T dy = offset[static_cast<std::size_t>(2 * tap) * plane + pos];
  const T dx = offset[static_cast<std::size_t>(2 * tap + 1) * plane + pos];
  return {static_cast<T>(oh * g.stride - g.pad + ki) + dy, static_cast<T>(ow * g.stride - g.pad + kj) + dx};
}

}  // namespace

template <typename T>
void deform_im2col(const T* x, const T* offset, const ConvGeometry& g, T* cols) {
  const int plane = g.out_plane();
  const int taps = g.taps();
#pragma omp parallel for schedule(static) if (static_cast<long>(g.col_rows()) * plane > kParallelGrain)
  for (int r = 0; r < g.col_rows(); ++r) {
    const int c = r / taps;
    const int t = r % taps;
    const T* src = x + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    T* dst = cols + static_cast<std::size_t>(r) * plane;
    for (int p = 0; p < plane; ++p) {
      const auto s = tap_position(offset, g, t, p);
      dst[p] = bilinear(src, g.in_h, g.in_w, s.row, s.col);
    }
  }
}

template <typename T>
void deform_col2im_add(const T* gcols, const T* offset, const ConvGeometry& g, T* gx) {
  const int plane = g.out_plane();
  const int taps = g.taps();
  const int H = g.in_h;
  const int W = g.in_w;
#pragma omp parallel for schedule(static) if (static_cast<long>(g.col_rows()) * plane > kParallelGrain)
  for (int c = 0; c < g.in_channels; ++c) {
    T* dst = gx + static_cast<std::size_t>(c) * H * W;
    for (int t = 0; t < taps; ++t) {
      const T* src = gcols + (static_cast<std::size_t>(c) * taps + t) * plane;
      for (int p = 0; p < plane; ++p) {
        const T gv = src[p];
        if (gv == T(0)) continue;
        const auto s = tap_position(offset, g, t, p);
        if (!(s.row > T(-1) && s.row < T(H) && s.col > T(-1) && s.col < T(W))) continue;
        const T fr = std::floor(s.row);
        const T fc = std::floor(s.col);
        const int r0 = static_cast<int>(fr);
        const int c0 = static_cast<int>(fc);
        const T lr = s.row - fr;
        const T lc = s.col - fc;
        const T w[4] = {(1 - lr) * (1 - lc), (1 - lr) * lc, lr * (1 - lc), lr * lc};
        const int rr[4] = {r0, r0, r0 + 1, r0 + 1};
        const int cc[4] = {c0, c0 + 1, c0, c0 + 1};
        for (int q = 0; q < 4; ++q) {
          if (rr[q] >= 0 && rr[q] < H && cc[q] >= 0 && cc[q] < W) {
            dst[static_cast<std::size_t>(rr[q]) * W + cc[q]] += gv * w[q];
          }
        }
      }
    }
  }
}

template <typename T>
void deform_col2offset_add(const T* gcols, const T* x, const T* offset, const ConvGeometry& g, T* goffset) {
  const int plane = g.out_plane();
  const int taps = g.taps();
  const int H = g.in_h;
  const int W = g.in_w;
  const std::size_t chan = static_cast<std::size_t>(H) * W;
#pragma omp parallel for schedule(static) if (static_cast<long>(g.col_rows()) * plane > kParallelGrain)
  for (int t = 0; t < taps; ++t) {
    T* gdy = goffset + static_cast<std::size_t>(2 * t) * plane;
    T* gdx = goffset + static_cast<std::size_t>(2 * t + 1) * plane;
    for (int p = 0; p < plane; ++p) {
      const auto s = tap_position(offset, g, t, p);
      if (!(s.row > T(-1) && s.row < T(H) && s.col > T(-1) && s.col < T(W))) continue;
      const T fr = std::floor(s.row);
      const T fc = std::floor(s.col);
      const int r0 = static_cast<int>(fr);
      const int c0 = static_cast<int>(fc);
      const T lr = s.row - fr;
      const T lc = s.col - fc;
      const bool in00 = r0 >= 0 && c0 >= 0;
      const bool in01 = r0 >= 0 && c0 + 1 < W;
      const bool in10 = r0 + 1 < H && c0 >= 0;
      const bool in11 = r0 + 1 < H && c0 + 1 < W;
      const std::size_t base = static_cast<std::size_t>(r0) * W + c0;
      T sy = 0;
      T sx = 0;
      for (int c = 0; c < g.in_channels; ++c) {
        const T gv = gcols[(static_cast<std::size_t>(c) * taps + t) * plane + p];
        if (gv == T(0)) continue;
        const T* xc = x + c * chan;
        const T v00 = in00 ? xc[base] : T(0);
        const T v01 = in01 ? xc[base + 1] : T(0);
        const T v10 = in10 ? xc[base + W] : T(0);
        const T v11 = in11 ? xc[base + W + 1] : T(0);
        sy += gv * ((1 - lc) * (v10 - v00) + lc * (v11 - v01));
        sx += gv * ((1 - lr) * (v01 - v00) + lr * (v11 - v10));
      }
      gdy[p] += sy;
      gdx[p] += sx;
    }
  }
}

template <typename T>
void row_sums_add(int rows, int N, const T* data, T* out) {
  for (int r = 0; r < rows; ++r) {
    const T* d = data + static_cast<std::size_t>(r) * N;
    T s = 0;
    for (int j = 0; j < N; ++j) s += d[j];
    out[r] += s;
  }
}

#define EVDEBLUR_INSTANTIATE(T)                                                                  \
  template void gemm_nn<T>(int, int, int, const T*, const T*, T*);                               \
  template void gemm_nt<T>(int, int, int, const T*, const T*, T*);                               \
  template void gemm_tn<T>(int, int, int, const T*, const T*, T*);                               \
  template void im2col<T>(const T*, const ConvGeometry&, T*);                                    \
  template void col2im_add<T>(const T*, const ConvGeometry&, T*);                                \
  template T bilinear<T>(const T*, int, int, T, T);                                              \
  template void deform_im2col<T>(const T*, const T*, const ConvGeometry&, T*);                   \
  template void deform_col2im_add<T>(const T*, const T*, const ConvGeometry&, T*);               \
  template void deform_col2offset_add<T>(const T*, const T*, const T*, const ConvGeometry&, T*); \
  template void row_sums_add<T>(int, int, const T*, T*);

EVDEBLUR_INSTANTIATE(float)
EVDEBLUR_INSTANTIATE(double)
#undef EVDEBLUR_INSTANTIATE

}  // namespace evdeblur::kernels
