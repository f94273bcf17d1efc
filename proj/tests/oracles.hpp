#pragma once

// Straightforward reference implementations used as test oracles. They are
// written independently of the library kernels and favour clarity over speed.

#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <vector>

#include "evdeblur/tensor.hpp"

namespace oracle {

using evdeblur::Tensor;

inline Tensor<double> random(const evdeblur::Shape& s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(s);
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

inline double pixel(const Tensor<double>& x, int c, int r, int col) {
  if (r < 0 || col < 0 || r >= x.height() || col >= x.width()) return 0.0;
  return x.at(c, r, col);
}

inline double bilinear(const Tensor<double>& x, int c, double row, double col) {
  const int r0 = static_cast<int>(std::floor(row));
  const int c0 = static_cast<int>(std::floor(col));
  const double fr = row - r0;
  const double fc = col - c0;
  return (1 - fr) * (1 - fc) * pixel(x, c, r0, c0) + (1 - fr) * fc * pixel(x, c, r0, c0 + 1) +
         fr * (1 - fc) * pixel(x, c, r0 + 1, c0) + fr * fc * pixel(x, c, r0 + 1, c0 + 1);
}

// Nested-loop cross-correlation. offsets (optional) follow the (2·tap, 2·tap+1) = (row, col) layout.
inline Tensor<double> conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b, int stride,
                           int pad, const Tensor<double>* offsets = nullptr) {
  const int cout = w.dim(0), cin = w.dim(1), k = w.dim(2);
  const int ho = (x.height() + 2 * pad - k) / stride + 1;
  const int wo = (x.width() + 2 * pad - k) / stride + 1;
  Tensor<double> y({cout, ho, wo});
  for (int o = 0; o < cout; ++o) {
    for (int i = 0; i < ho; ++i) {
      for (int j = 0; j < wo; ++j) {
        double s = b ? (*b)[static_cast<std::size_t>(o)] : 0.0;
        for (int c = 0; c < cin; ++c) {
          for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
              const double wv = w[((static_cast<std::size_t>(o) * cin + c) * k + ki) * k + kj];
              const int tap = ki * k + kj;
              double row = i * stride - pad + ki;
              double col = j * stride - pad + kj;
              if (offsets) {
                row += offsets->at(2 * tap, i, j);
                col += offsets->at(2 * tap + 1, i, j);
                s += wv * bilinear(x, c, row, col);
              } else {
                s += wv * pixel(x, c, static_cast<int>(row), static_cast<int>(col));
              }
            }
          }
        }
        y.at(o, i, j) = s;
      }
    }
  }
  return y;
}

// Full 2-D DFT of one plane, unnormalized.
inline std::vector<std::complex<double>> dft2(const Tensor<double>& x, int c) {
  const int H = x.height(), W = x.width();
  std::vector<std::complex<double>> out(static_cast<std::size_t>(H) * W);
  for (int k = 0; k < H; ++k) {
    for (int l = 0; l < W; ++l) {
      std::complex<double> s = 0;
      for (int h = 0; h < H; ++h) {
        for (int w = 0; w < W; ++w) {
          const double th = -2.0 * std::numbers::pi * (static_cast<double>(k) * h / H + static_cast<double>(l) * w / W);
          s += x.at(c, h, w) * std::polar(1.0, th);
        }
      }
      out[static_cast<std::size_t>(k) * W + l] = s;
    }
  }
  return out;
}

}  // namespace oracle
