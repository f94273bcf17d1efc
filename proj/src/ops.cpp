#include "evdeblur/ops.hpp"

#include <algorithm>
#include <cmath>

#include "evdeblur/kernels.hpp"

namespace evdeblur {

namespace {

using kernels::ConvGeometry;

template <typename T>
T sigmoid_scalar(T v) {
  if (v >= 0) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
T activate(Activation kind, T v) {
  switch (kind) {
    case Activation::sigmoid:
      return sigmoid_scalar(v);
    case Activation::tanh:
      return std::tanh(v);
    case Activation::relu:
      return v > 0 ? v : T(0);
  }
  return v;
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

// Column weight c_l of the half-spectrum synthesis: bins with a mirror
// partner count twice; DC and (even-width) Nyquist once.
inline double half_spectrum_weight(int l, int W) {
  if (l == 0) return 1.0;
  if (W % 2 == 0 && l == W / 2) return 1.0;
  return 2.0;
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b, int stride, int pad) {
  const ConvGeometry g = kernels::conv_geometry(x.shape(), w.shape(), stride, pad);
  if (b) {
    require(b->ndim() == 1 && b->dim(0) == g.out_channels,
            "conv: bias shape " + shape_str(b->shape()) + " does not match C_out " + std::to_string(g.out_channels));
  }
  Tensor<T> out({g.out_channels, g.out_h, g.out_w});
  const int plane = g.out_plane();
  if (b) {
    for (int o = 0; o < g.out_channels; ++o) std::fill_n(out.data() + static_cast<std::size_t>(o) * plane, plane, (*b)[o]);
  }
  if (g.is_pointwise()) {
    kernels::gemm_nn(g.out_channels, plane, g.col_rows(), w.data(), x.data(), out.data());
  } else {
    std::vector<T> cols(static_cast<std::size_t>(g.col_rows()) * plane);
    kernels::im2col(x.data(), g, cols.data());
    kernels::gemm_nn(g.out_channels, plane, g.col_rows(), w.data(), cols.data(), out.data());
  }
  return out;
}

template <typename T>
Tensor<T> deform_forward(const Tensor<T>& x, const Tensor<T>& off, const Tensor<T>& w, const Tensor<T>* b,
                         int stride, int pad) {
  const ConvGeometry g = kernels::conv_geometry(x.shape(), w.shape(), stride, pad);
  const Shape want{2 * g.taps(), g.out_h, g.out_w};
  require(off.shape() == want, "deformable_conv2d: offset shape " + shape_str(off.shape()) + " expected " +
                                   shape_str(want));
  if (b) {
    require(b->ndim() == 1 && b->dim(0) == g.out_channels,
            "deformable_conv2d: bias shape " + shape_str(b->shape()) + " does not match C_out");
  }
  Tensor<T> out({g.out_channels, g.out_h, g.out_w});
  const int plane = g.out_plane();
  if (b) {
    for (int o = 0; o < g.out_channels; ++o) std::fill_n(out.data() + static_cast<std::size_t>(o) * plane, plane, (*b)[o]);
  }
  std::vector<T> cols(static_cast<std::size_t>(g.col_rows()) * plane);
  kernels::deform_im2col(x.data(), off.data(), g, cols.data());
  kernels::gemm_nn(g.out_channels, plane, g.col_rows(), w.data(), cols.data(), out.data());
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Plain tensor operations
// ---------------------------------------------------------------------------

template <typename T>
void ConvParams<T>::validate() const {
  require(weight.ndim() == 4, "ConvParams: weight must be C_out×C_in×k×k, got " + shape_str(weight.shape()));
  require(weight.dim(2) == weight.dim(3), "ConvParams: kernel must be square");
  require(weight.dim(2) % 2 == 1, "ConvParams: kernel size must be odd");
  require(stride >= 1, "ConvParams: stride must be >= 1");
  require(padding >= -1, "ConvParams: padding must be >= 0");
  require(bias.empty() || (bias.ndim() == 1 && bias.dim(0) == weight.dim(0)),
          "ConvParams: bias must have C_out entries");
  require_finite(weight, "ConvParams weight");
  require_finite(bias, "ConvParams bias");
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p) {
  p.validate();
  require_chw(x, "conv2d input");
  require_finite(x, "conv2d input");
  return conv_forward(x, p.weight, p.bias.empty() ? nullptr : &p.bias, p.stride, p.resolved_padding());
}

template <typename T>
T bilinear_sample(const Tensor<T>& x, T px, T py, int c) {
  require_chw(x, "bilinear_sample input");
  require(c >= 0 && c < x.channels(), "bilinear_sample: channel index " + std::to_string(c) + " out of range [0," +
                                          std::to_string(x.channels()) + ")");
  const T* plane = x.data() + static_cast<std::size_t>(c) * x.height() * x.width();
  return kernels::bilinear(plane, x.height(), x.width(), py, px);
}

template <typename T>
Tensor<T> deformable_conv2d(const Tensor<T>& x, const ConvParams<T>& p, const OffsetField<T>& off) {
  p.validate();
  require_chw(x, "deformable_conv2d input");
  require_finite(x, "deformable_conv2d input");
  require_finite(off.offsets, "deformable_conv2d offsets");
  return deform_forward(x, off.offsets, p.weight, p.bias.empty() ? nullptr : &p.bias, p.stride,
                        p.resolved_padding());
}

template <typename T>
Tensor<T> elementwise(Activation kind, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = activate(kind, x[i]);
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_chw(x, "global_avg_pool input");
  const std::size_t plane = static_cast<std::size_t>(x.height()) * x.width();
  require(plane > 0, "global_avg_pool: H·W must be > 0");
  Tensor<T> out({x.channels()});
  for (int c = 0; c < x.channels(); ++c) {
    const T* p = x.data() + c * plane;
    T s = 0;
    for (std::size_t i = 0; i < plane; ++i) s += p[i];
    out[static_cast<std::size_t>(c)] = s / static_cast<T>(plane);
  }
  return out;
}

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>& b) {
  require(x.ndim() == 1, "dense: x must be a vector, got " + shape_str(x.shape()));
  require(W.ndim() == 2, "dense: W must be a matrix, got " + shape_str(W.shape()));
  require(W.dim(1) == x.dim(0), "dense: W columns " + std::to_string(W.dim(1)) + " != x length " +
                                    std::to_string(x.dim(0)));
  require(b.ndim() == 1 && b.dim(0) == W.dim(0), "dense: b length must equal W rows " + std::to_string(W.dim(0)));
  Tensor<T> out = b;
  for (int i = 0; i < W.dim(0); ++i) {
    T s = 0;
    for (int j = 0; j < W.dim(1); ++j) s += W[static_cast<std::size_t>(i) * W.dim(1) + j] * x[static_cast<std::size_t>(j)];
    out[static_cast<std::size_t>(i)] += s;
  }
  return out;
}

template <typename T>
Spectrum<T> rfft2(const Tensor<T>& x) {
  require_chw(x, "rfft2 input");
  require(x.height() >= 1 && x.width() >= 1, "rfft2: H and W must be >= 1");
  Spectrum<T> s;
  s.channels = x.channels();
  s.height = x.height();
  s.width = x.width();
  s.bins.resize(static_cast<std::size_t>(s.channels) * s.height * s.bins_per_row());
  kernels::rfft2(x.data(), s.channels, s.height, s.width, s.bins.data());
  return s;
}

template <typename T>
Tensor<T> irfft2(const Spectrum<T>& spec, const Shape& dims) {
  require(dims.size() == 3, "irfft2: dims must be C×H×W");
  require(dims[0] == spec.channels, "irfft2: channel dim " + std::to_string(dims[0]) + " != spectrum channels " +
                                        std::to_string(spec.channels));
  require(dims[1] == spec.height, "irfft2: height dim " + std::to_string(dims[1]) + " != spectrum height " +
                                      std::to_string(spec.height));
  require(dims[2] / 2 + 1 == spec.bins_per_row(),
          "irfft2: width dim " + std::to_string(dims[2]) + " inconsistent with " +
              std::to_string(spec.bins_per_row()) + " bins per row");
  require(spec.bins.size() == static_cast<std::size_t>(spec.channels) * spec.height * spec.bins_per_row(),
          "irfft2: spectrum storage size mismatch");
  Tensor<T> out(dims);
  kernels::irfft2(spec.bins.data(), dims[0], dims[1], dims[2], out.data());
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable operations
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  accumulate(out, b.value());
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (std::size_t i = 0; i < 2; ++i) {
      if (n.input_needs_grad(i)) accumulate(n.input_grad(i), n.grad);
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    if (n.input_needs_grad(0)) accumulate(n.input_grad(0), n.grad);
    if (n.input_needs_grad(1)) {
      auto& g = n.input_grad(1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    const auto& av = n.input_value(0);
    const auto& bv = n.input_value(1);
    if (n.input_needs_grad(0)) {
      auto& g = n.input_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
    }
    if (n.input_needs_grad(1)) {
      auto& g = n.input_grad(1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v *= factor;
  return make_result<T>(std::move(out), {a}, [factor](Node<T>& n) {
    auto& g = n.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * n.grad[i];
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T value) {
  Tensor<T> out = a.value();
  for (auto& v : out.storage()) v += value;
  return make_result<T>(std::move(out), {a}, [](Node<T>& n) { accumulate(n.input_grad(0), n.grad); });
}

template <typename T>
Var<T> scalar_mul(const Var<T>& w, const Var<T>& x) {
  require(w.size() == 1, "scalar_mul: weight must be a single element, got " + shape_str(w.shape()));
  const T wv = w.value()[0];
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v *= wv;
  return make_result<T>(std::move(out), {w, x}, [](Node<T>& n) {
    const T wv = n.input_value(0)[0];
    const auto& xv = n.input_value(1);
    if (n.input_needs_grad(0)) {
      T s = 0;
      for (std::size_t i = 0; i < xv.size(); ++i) s += n.grad[i] * xv[i];
      n.input_grad(0)[0] += s;
    }
    if (n.input_needs_grad(1)) {
      auto& g = n.input_grad(1);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += wv * n.grad[i];
    }
  });
}

template <typename T>
Var<T> channel_mul(const Var<T>& x, const Var<T>& a) {
  require_chw(x.value(), "channel_mul input");
  require(a.value().ndim() == 1 && a.value().dim(0) == x.value().channels(),
          "channel_mul: scale vector length must equal channel dim " + std::to_string(x.value().channels()));
  const int C = x.value().channels();
  const std::size_t plane = static_cast<std::size_t>(x.value().height()) * x.value().width();
  Tensor<T> out = x.value();
  for (int c = 0; c < C; ++c) {
    const T s = a.value()[static_cast<std::size_t>(c)];
    T* p = out.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] *= s;
  }
  return make_result<T>(std::move(out), {x, a}, [C, plane](Node<T>& n) {
    const auto& xv = n.input_value(0);
    const auto& av = n.input_value(1);
    for (int c = 0; c < C; ++c) {
      const T* g = n.grad.data() + c * plane;
      if (n.input_needs_grad(0)) {
        T* gx = n.input_grad(0).data() + c * plane;
        const T s = av[static_cast<std::size_t>(c)];
        for (std::size_t i = 0; i < plane; ++i) gx[i] += s * g[i];
      }
      if (n.input_needs_grad(1)) {
        const T* xp = xv.data() + c * plane;
        T s = 0;
        for (std::size_t i = 0; i < plane; ++i) s += g[i] * xp[i];
        n.input_grad(1)[static_cast<std::size_t>(c)] += s;
      }
    }
  });
}

template <typename T>
Var<T> spatial_mul(const Var<T>& x, const Var<T>& s) {
  require_chw(x.value(), "spatial_mul input");
  require(s.value().ndim() == 3 && s.value().channels() == 1 && s.value().height() == x.value().height() &&
              s.value().width() == x.value().width(),
          "spatial_mul: map must be 1×H×W matching input, got " + shape_str(s.shape()));
  const int C = x.value().channels();
  const std::size_t plane = static_cast<std::size_t>(x.value().height()) * x.value().width();
  Tensor<T> out = x.value();
  for (int c = 0; c < C; ++c) {
    T* p = out.data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] *= s.value()[i];
  }
  return make_result<T>(std::move(out), {x, s}, [C, plane](Node<T>& n) {
    const auto& xv = n.input_value(0);
    const auto& sv = n.input_value(1);
    if (n.input_needs_grad(0)) {
      auto& gx = n.input_grad(0);
      for (int c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < plane; ++i) gx[c * plane + i] += sv[i] * n.grad[c * plane + i];
      }
    }
    if (n.input_needs_grad(1)) {
      auto& gs = n.input_grad(1);
      for (int c = 0; c < C; ++c) {
        for (std::size_t i = 0; i < plane; ++i) gs[i] += xv[c * plane + i] * n.grad[c * plane + i];
      }
    }
  });
}

template <typename T>
Var<T> activation(Activation kind, const Var<T>& x) {
  Tensor<T> out = elementwise(kind, x.value());
  return make_result<T>(std::move(out), {x}, [kind](Node<T>& n) {
    auto& g = n.input_grad(0);
    const auto& y = n.value;
    switch (kind) {
      case Activation::sigmoid:
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * y[i] * (T(1) - y[i]);
        break;
      case Activation::tanh:
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * (T(1) - y[i] * y[i]);
        break;
      case Activation::relu: {
        const auto& xv = n.input_value(0);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (xv[i] > 0) g[i] += n.grad[i];
        }
        break;
      }
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  const bool has_bias = static_cast<bool>(bias);
  Tensor<T> out = conv_forward(x.value(), weight.value(), has_bias ? &bias.value() : nullptr, stride, pad);
  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(std::move(out), std::move(inputs), [stride, pad, has_bias](Node<T>& n) {
    const auto& xv = n.input_value(0);
    const auto& wv = n.input_value(1);
    const ConvGeometry g = kernels::conv_geometry(xv.shape(), wv.shape(), stride, pad);
    const int plane = g.out_plane();
    const T* gout = n.grad.data();
    std::vector<T> cols_buf;
    const T* cols = xv.data();
    if (n.input_needs_grad(1) && !g.is_pointwise()) {
      cols_buf.resize(static_cast<std::size_t>(g.col_rows()) * plane);
      kernels::im2col(xv.data(), g, cols_buf.data());
      cols = cols_buf.data();
    }
    if (n.input_needs_grad(1)) {
      kernels::gemm_nt(g.out_channels, plane, g.col_rows(), gout, cols, n.input_grad(1).data());
    }
    if (has_bias && n.input_needs_grad(2)) {
      kernels::row_sums_add(g.out_channels, plane, gout, n.input_grad(2).data());
    }
    if (n.input_needs_grad(0)) {
      if (g.is_pointwise()) {
        kernels::gemm_tn(g.out_channels, plane, g.col_rows(), wv.data(), gout, n.input_grad(0).data());
      } else {
        std::vector<T> gcols(static_cast<std::size_t>(g.col_rows()) * plane, T(0));
        kernels::gemm_tn(g.out_channels, plane, g.col_rows(), wv.data(), gout, gcols.data());
        kernels::col2im_add(gcols.data(), g, n.input_grad(0).data());
      }
    }
  });
}

template <typename T>
Var<T> deformable_conv2d(const Var<T>& x, const Var<T>& offset, const Var<T>& weight, const Var<T>& bias,
                         int stride, int pad) {
  const bool has_bias = static_cast<bool>(bias);
  Tensor<T> out =
      deform_forward(x.value(), offset.value(), weight.value(), has_bias ? &bias.value() : nullptr, stride, pad);
  std::vector<Var<T>> inputs{x, offset, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(std::move(out), std::move(inputs), [stride, pad, has_bias](Node<T>& n) {
    const auto& xv = n.input_value(0);
    const auto& ov = n.input_value(1);
    const auto& wv = n.input_value(2);
    const ConvGeometry g = kernels::conv_geometry(xv.shape(), wv.shape(), stride, pad);
    const int plane = g.out_plane();
    const T* gout = n.grad.data();
    if (n.input_needs_grad(2)) {
      std::vector<T> cols(static_cast<std::size_t>(g.col_rows()) * plane);
      kernels::deform_im2col(xv.data(), ov.data(), g, cols.data());
      kernels::gemm_nt(g.out_channels, plane, g.col_rows(), gout, cols.data(), n.input_grad(2).data());
    }
    if (has_bias && n.input_needs_grad(3)) {
      kernels::row_sums_add(g.out_channels, plane, gout, n.input_grad(3).data());
    }
    if (n.input_needs_grad(0) || n.input_needs_grad(1)) {
      std::vector<T> gcols(static_cast<std::size_t>(g.col_rows()) * plane, T(0));
      kernels::gemm_tn(g.out_channels, plane, g.col_rows(), wv.data(), gout, gcols.data());
      if (n.input_needs_grad(0)) kernels::deform_col2im_add(gcols.data(), ov.data(), g, n.input_grad(0).data());
      if (n.input_needs_grad(1)) {
        kernels::deform_col2offset_add(gcols.data(), xv.data(), ov.data(), g, n.input_grad(1).data());
      }
    }
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  Tensor<T> out = global_avg_pool(x.value());
  return make_result<T>(std::move(out), {x}, [](Node<T>& n) {
    const auto& xv = n.input_value(0);
    const std::size_t plane = static_cast<std::size_t>(xv.height()) * xv.width();
    auto& g = n.input_grad(0);
    for (int c = 0; c < xv.channels(); ++c) {
      const T v = n.grad[static_cast<std::size_t>(c)] / static_cast<T>(plane);
      for (std::size_t i = 0; i < plane; ++i) g[c * plane + i] += v;
    }
  });
}

template <typename T>
Var<T> dense(const Var<T>& x, const Var<T>& W, const Var<T>& b) {
  Tensor<T> out = dense(x.value(), W.value(), b.value());
  return make_result<T>(std::move(out), {x, W, b}, [](Node<T>& n) {
    const auto& xv = n.input_value(0);
    const auto& wv = n.input_value(1);
    const int rows = wv.dim(0);
    const int cols = wv.dim(1);
    if (n.input_needs_grad(0)) {
      auto& gx = n.input_grad(0);
      for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) gx[static_cast<std::size_t>(j)] += wv[static_cast<std::size_t>(i) * cols + j] * n.grad[static_cast<std::size_t>(i)];
      }
    }
    if (n.input_needs_grad(1)) {
      auto& gw = n.input_grad(1);
      for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) gw[static_cast<std::size_t>(i) * cols + j] += n.grad[static_cast<std::size_t>(i)] * xv[static_cast<std::size_t>(j)];
      }
    }
    if (n.input_needs_grad(2)) accumulate(n.input_grad(2), n.grad);
  });
}

template <typename T>
Var<T> rfft2(const Var<T>& x) {
  require_chw(x.value(), "rfft2 input");
  const int C = x.value().channels();
  const int H = x.value().height();
  const int W = x.value().width();
  const int Wf = W / 2 + 1;
  std::vector<std::complex<T>> bins(static_cast<std::size_t>(C) * H * Wf);
  kernels::rfft2(x.value().data(), C, H, W, bins.data());
  Tensor<T> out({2 * C, H, Wf});
  const std::size_t half = static_cast<std::size_t>(C) * H * Wf;
  for (std::size_t i = 0; i < half; ++i) {
    out[i] = bins[i].real();
    out[half + i] = bins[i].imag();
  }
  return make_result<T>(std::move(out), {x}, [C, H, W, Wf, half](Node<T>& n) {
    // x̄ = Re Σ_half Ḡ·e^{+iθ}; synthesize with the inverse after undoing its
    // mirror weights and normalization.
    std::vector<std::complex<T>> g(half);
    const T hw = static_cast<T>(static_cast<double>(H) * W);
    for (std::size_t i = 0; i < half; ++i) {
      const int l = static_cast<int>(i % static_cast<std::size_t>(Wf));
      const T s = hw / static_cast<T>(half_spectrum_weight(l, W));
      g[i] = {n.grad[i] * s, n.grad[half + i] * s};
    }
    Tensor<T> gx({C, H, W});
    kernels::irfft2(g.data(), C, H, W, gx.data());
    accumulate(n.input_grad(0), gx);
  });
}

template <typename T>
Var<T> irfft2(const Var<T>& packed, int width) {
  require_chw(packed.value(), "irfft2 input");
  require(packed.value().channels() % 2 == 0, "irfft2: packed spectrum needs an even channel count");
  const int C = packed.value().channels() / 2;
  const int H = packed.value().height();
  const int Wf = packed.value().width();
  require(width / 2 + 1 == Wf, "irfft2: width dim " + std::to_string(width) + " inconsistent with " +
                                   std::to_string(Wf) + " bins per row");
  const int W = width;
  const std::size_t half = static_cast<std::size_t>(C) * H * Wf;
  std::vector<std::complex<T>> bins(half);
  for (std::size_t i = 0; i < half; ++i) bins[i] = {packed.value()[i], packed.value()[half + i]};
  Tensor<T> out({C, H, W});
  kernels::irfft2(bins.data(), C, H, W, out.data());
  return make_result<T>(std::move(out), {packed}, [C, H, W, Wf, half](Node<T>& n) {
    std::vector<std::complex<T>> spec(half);
    kernels::rfft2(n.grad.data(), C, H, W, spec.data());
    const T hw = static_cast<T>(static_cast<double>(H) * W);
    auto& g = n.input_grad(0);
    for (std::size_t i = 0; i < half; ++i) {
      const int l = static_cast<int>(i % static_cast<std::size_t>(Wf));
      const T s = static_cast<T>(half_spectrum_weight(l, W)) / hw;
      g[i] += spec[i].real() * s;
      g[half + i] += spec[i].imag() * s;
    }
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_channels: no inputs");
  const int H = parts[0].value().height();
  const int W = parts[0].value().width();
  int C = 0;
  for (const auto& p : parts) {
    require_chw(p.value(), "concat_channels input");
    require(p.value().height() == H && p.value().width() == W,
            "concat_channels: spatial dims mismatch " + shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
    C += p.value().channels();
  }
  Tensor<T> out({C, H, W});
  std::size_t pos = 0;
  for (const auto& p : parts) {
    std::copy(p.value().storage().begin(), p.value().storage().end(), out.data() + pos);
    pos += p.size();
  }
  return make_result<T>(std::move(out), parts, [](Node<T>& n) {
    std::size_t pos = 0;
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      const std::size_t len = n.input_value(i).size();
      if (n.input_needs_grad(i)) {
        auto& g = n.input_grad(i);
        for (std::size_t j = 0; j < len; ++j) g[j] += n.grad[pos + j];
      }
      pos += len;
    }
  });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, int begin, int count) {
  require_chw(x.value(), "slice_channels input");
  require(begin >= 0 && count >= 1 && begin + count <= x.value().channels(),
          "slice_channels: range [" + std::to_string(begin) + "," + std::to_string(begin + count) +
              ") outside channel dim " + std::to_string(x.value().channels()));
  const std::size_t plane = static_cast<std::size_t>(x.value().height()) * x.value().width();
  Tensor<T> out({count, x.value().height(), x.value().width()});
  std::copy_n(x.value().data() + begin * plane, count * plane, out.data());
  return make_result<T>(std::move(out), {x}, [begin, plane](Node<T>& n) {
    T* g = n.input_grad(0).data() + begin * plane;
    for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
  });
}

template <typename T>
Var<T> channel_max_mean(const Var<T>& x) {
  require_chw(x.value(), "channel_max_mean input");
  const int C = x.value().channels();
  const std::size_t plane = static_cast<std::size_t>(x.value().height()) * x.value().width();
  Tensor<T> out({2, x.value().height(), x.value().width()});
  std::vector<int> argmax(plane, 0);
  const T* xv = x.value().data();
  for (std::size_t i = 0; i < plane; ++i) {
    T best = xv[i];
    T s = xv[i];
    for (int c = 1; c < C; ++c) {
      const T v = xv[c * plane + i];
      if (v > best) {
        best = v;
        argmax[i] = c;
      }
      s += v;
    }
    out[i] = best;
    out[plane + i] = s / static_cast<T>(C);
  }
  return make_result<T>(std::move(out), {x}, [C, plane, argmax = std::move(argmax)](Node<T>& n) {
    auto& g = n.input_grad(0);
    for (std::size_t i = 0; i < plane; ++i) {
      g[argmax[i] * plane + i] += n.grad[i];
      const T m = n.grad[plane + i] / static_cast<T>(C);
      for (int c = 0; c < C; ++c) g[c * plane + i] += m;
    }
  });
}

namespace {

struct AxisTaps {
  std::vector<int> i0;
  std::vector<int> i1;
  std::vector<double> frac;
};

AxisTaps axis_taps(int in, int out) {
  AxisTaps t;
  t.i0.resize(static_cast<std::size_t>(out));
  t.i1.resize(static_cast<std::size_t>(out));
  t.frac.resize(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(src);
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = i0 < in - 1 ? i0 + 1 : i0;
    t.i0[static_cast<std::size_t>(o)] = i0;
    t.i1[static_cast<std::size_t>(o)] = i1;
    t.frac[static_cast<std::size_t>(o)] = src - i0;
  }
  return t;
}

}  // namespace

template <typename T>
Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w) {
  require_chw(x.value(), "resize_bilinear input");
  require(out_h >= 1 && out_w >= 1, "resize_bilinear: output dims must be >= 1");
  const int C = x.value().channels();
  const int H = x.value().height();
  const int W = x.value().width();
  if (H == out_h && W == out_w) return x;
  auto ty = std::make_shared<AxisTaps>(axis_taps(H, out_h));
  auto tx = std::make_shared<AxisTaps>(axis_taps(W, out_w));
  Tensor<T> out({C, out_h, out_w});
  for (int c = 0; c < C; ++c) {
    for (int oh = 0; oh < out_h; ++oh) {
      const T fy = static_cast<T>(ty->frac[static_cast<std::size_t>(oh)]);
      const int y0 = ty->i0[static_cast<std::size_t>(oh)];
      const int y1 = ty->i1[static_cast<std::size_t>(oh)];
      for (int ow = 0; ow < out_w; ++ow) {
        const T fx = static_cast<T>(tx->frac[static_cast<std::size_t>(ow)]);
        const int x0 = tx->i0[static_cast<std::size_t>(ow)];
        const int x1 = tx->i1[static_cast<std::size_t>(ow)];
        const auto& v = x.value();
        out.at(c, oh, ow) = (1 - fy) * ((1 - fx) * v.at(c, y0, x0) + fx * v.at(c, y0, x1)) +
                            fy * ((1 - fx) * v.at(c, y1, x0) + fx * v.at(c, y1, x1));
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [ty, tx, C, out_h, out_w](Node<T>& n) {
    auto& g = n.input_grad(0);
    for (int c = 0; c < C; ++c) {
      for (int oh = 0; oh < out_h; ++oh) {
        const T fy = static_cast<T>(ty->frac[static_cast<std::size_t>(oh)]);
        const int y0 = ty->i0[static_cast<std::size_t>(oh)];
        const int y1 = ty->i1[static_cast<std::size_t>(oh)];
        for (int ow = 0; ow < out_w; ++ow) {
          const T fx = static_cast<T>(tx->frac[static_cast<std::size_t>(ow)]);
          const int x0 = tx->i0[static_cast<std::size_t>(ow)];
          const int x1 = tx->i1[static_cast<std::size_t>(ow)];
          const T gv = n.grad.at(c, oh, ow);
          g.at(c, y0, x0) += gv * (1 - fy) * (1 - fx);
          g.at(c, y0, x1) += gv * (1 - fy) * fx;
          g.at(c, y1, x0) += gv * fy * (1 - fx);
          g.at(c, y1, x1) += gv * fy * fx;
        }
      }
    }
  });
}

template <typename T>
Var<T> area_downsample(const Var<T>& x, int factor) {
  require_chw(x.value(), "area_downsample input");
  require(factor >= 1, "area_downsample: factor must be >= 1");
  if (factor == 1) return x;
  const int C = x.value().channels();
  const int H = x.value().height();
  const int W = x.value().width();
  require(H % factor == 0 && W % factor == 0, "area_downsample: dims " + shape_str(x.shape()) +
                                                  " not divisible by " + std::to_string(factor));
  const int oh_n = H / factor;
  const int ow_n = W / factor;
  const T inv = T(1) / static_cast<T>(factor * factor);
  Tensor<T> out({C, oh_n, ow_n});
  for (int c = 0; c < C; ++c) {
    for (int oh = 0; oh < oh_n; ++oh) {
      for (int ow = 0; ow < ow_n; ++ow) {
        T s = 0;
        for (int dy = 0; dy < factor; ++dy) {
          for (int dx = 0; dx < factor; ++dx) s += x.value().at(c, oh * factor + dy, ow * factor + dx);
        }
        out.at(c, oh, ow) = s * inv;
      }
    }
  }
  return make_result<T>(std::move(out), {x}, [C, H, W, factor, inv](Node<T>& n) {
    auto& g = n.input_grad(0);
    for (int c = 0; c < C; ++c) {
      for (int h = 0; h < H; ++h) {
        for (int w = 0; w < W; ++w) g.at(c, h, w) += n.grad.at(c, h / factor, w / factor) * inv;
      }
    }
  });
}

namespace {
inline int reflect_index(int i, int n) { return i < n ? i : 2 * n - 2 - i; }
}  // namespace

template <typename T>
Var<T> reflect_pad(const Var<T>& x, int pad_bottom, int pad_right) {
  require_chw(x.value(), "reflect_pad input");
  const int C = x.value().channels();
  const int H = x.value().height();
  const int W = x.value().width();
  require(pad_bottom >= 0 && pad_right >= 0, "reflect_pad: padding must be >= 0");
  require(pad_bottom < H && pad_right < W, "reflect_pad: padding must be smaller than the padded dim");
  if (pad_bottom == 0 && pad_right == 0) return x;
  const int Hp = H + pad_bottom;
  const int Wp = W + pad_right;
  Tensor<T> out({C, Hp, Wp});
  for (int c = 0; c < C; ++c) {
    for (int h = 0; h < Hp; ++h) {
      for (int w = 0; w < Wp; ++w) out.at(c, h, w) = x.value().at(c, reflect_index(h, H), reflect_index(w, W));
    }
  }
  return make_result<T>(std::move(out), {x}, [C, H, W, Hp, Wp](Node<T>& n) {
    auto& g = n.input_grad(0);
    for (int c = 0; c < C; ++c) {
      for (int h = 0; h < Hp; ++h) {
        for (int w = 0; w < Wp; ++w) g.at(c, reflect_index(h, H), reflect_index(w, W)) += n.grad.at(c, h, w);
      }
    }
  });
}

template <typename T>
Var<T> crop(const Var<T>& x, int out_h, int out_w) {
  require_chw(x.value(), "crop input");
  require(out_h >= 1 && out_w >= 1 && out_h <= x.value().height() && out_w <= x.value().width(),
          "crop: window " + std::to_string(out_h) + "x" + std::to_string(out_w) + " exceeds " + shape_str(x.shape()));
  if (out_h == x.value().height() && out_w == x.value().width()) return x;
  const int C = x.value().channels();
  Tensor<T> out({C, out_h, out_w});
  for (int c = 0; c < C; ++c) {
    for (int h = 0; h < out_h; ++h) {
      for (int w = 0; w < out_w; ++w) out.at(c, h, w) = x.value().at(c, h, w);
    }
  }
  return make_result<T>(std::move(out), {x}, [C, out_h, out_w](Node<T>& n) {
    auto& g = n.input_grad(0);
    for (int c = 0; c < C; ++c) {
      for (int h = 0; h < out_h; ++h) {
        for (int w = 0; w < out_w; ++w) g.at(c, h, w) += n.grad.at(c, h, w);
      }
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T s = 0;
  for (T v : x.value().storage()) s += v;
  return make_result<T>(Tensor<T>({1}, s), {x}, [](Node<T>& n) {
    auto& g = n.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  require(x.size() > 0, "mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights) {
  require_same_shape(x.value(), weights, "weighted_sum");
  T s = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * x.value()[i];
  return make_result<T>(Tensor<T>({1}, s), {x}, [weights](Node<T>& n) {
    auto& g = n.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[0] * weights[i];
  });
}

#define EVDEBLUR_INSTANTIATE(T)                                                                         \
  template struct ConvParams<T>;                                                                        \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const ConvParams<T>&);                                 \
  template T bilinear_sample<T>(const Tensor<T>&, T, T, int);                                           \
  template Tensor<T> deformable_conv2d<T>(const Tensor<T>&, const ConvParams<T>&, const OffsetField<T>&); \
  template Tensor<T> elementwise<T>(Activation, const Tensor<T>&);                                      \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                              \
  template Tensor<T> dense<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template Spectrum<T> rfft2<T>(const Tensor<T>&);                                                      \
  template Tensor<T> irfft2<T>(const Spectrum<T>&, const Shape&);                                       \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                                 \
  template Var<T> scale<T>(const Var<T>&, T);                                                           \
  template Var<T> add_scalar<T>(const Var<T>&, T);                                                      \
  template Var<T> scalar_mul<T>(const Var<T>&, const Var<T>&);                                          \
  template Var<T> channel_mul<T>(const Var<T>&, const Var<T>&);                                         \
  template Var<T> spatial_mul<T>(const Var<T>&, const Var<T>&);                                         \
  template Var<T> activation<T>(Activation, const Var<T>&);                                             \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int);                     \
  template Var<T> deformable_conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, int, int); \
  template Var<T> global_avg_pool<T>(const Var<T>&);                                                    \
  template Var<T> dense<T>(const Var<T>&, const Var<T>&, const Var<T>&);                                \
  template Var<T> rfft2<T>(const Var<T>&);                                                              \
  template Var<T> irfft2<T>(const Var<T>&, int);                                                        \
  template Var<T> concat_channels<T>(const std::vector<Var<T>>&);                                       \
  template Var<T> slice_channels<T>(const Var<T>&, int, int);                                           \
  template Var<T> channel_max_mean<T>(const Var<T>&);                                                   \
  template Var<T> resize_bilinear<T>(const Var<T>&, int, int);                                          \
  template Var<T> area_downsample<T>(const Var<T>&, int);                                               \
  template Var<T> reflect_pad<T>(const Var<T>&, int, int);                                              \
  template Var<T> crop<T>(const Var<T>&, int, int);                                                     \
  template Var<T> sum<T>(const Var<T>&);                                                                \
  template Var<T> mean<T>(const Var<T>&);                                                               \
  template Var<T> weighted_sum<T>(const Var<T>&, const Tensor<T>&);

EVDEBLUR_INSTANTIATE(float)
EVDEBLUR_INSTANTIATE(double)
#undef EVDEBLUR_INSTANTIATE

}  // namespace evdeblur
