#include "evdeblur/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "evdeblur/ops.hpp"

namespace evdeblur {

void LossConfig::validate() const {
  require(ssim_weight >= 0.0, "LossConfig: ssim_weight must be >= 0");
  require(window >= 1 && window % 2 == 1, "LossConfig: SSIM window must be odd");
  require(sigma > 0.0, "LossConfig: SSIM sigma must be > 0");
  require(range > 0.0, "LossConfig: SSIM range must be > 0");
}

template <typename T>
Var<T> l1_loss(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.value(), b.value(), "l1_loss");
  require(a.size() > 0, "l1_loss: empty tensors");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a.value()[i]) - b.value()[i]);
  const T inv = T(1) / static_cast<T>(a.size());
  return make_result<T>(Tensor<T>({1}, static_cast<T>(s / static_cast<double>(a.size()))), {a, b},
                        [inv](Node<T>& n) {
                          const auto& av = n.input_value(0);
                          const auto& bv = n.input_value(1);
                          const T g = n.grad[0] * inv;
                          for (std::size_t k = 0; k < 2; ++k) {
                            if (!n.input_needs_grad(k)) continue;
                            auto& gi = n.input_grad(k);
                            const T sign = k == 0 ? T(1) : T(-1);
                            for (std::size_t i = 0; i < gi.size(); ++i) {
                              const T d = av[i] - bv[i];
                              if (d > 0) gi[i] += sign * g;
                              else if (d < 0) gi[i] -= sign * g;
                            }
                          }
                        });
}

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(size));
  const int r = size / 2;
  double s = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - r;
    w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    s += w[static_cast<std::size_t>(i)];
  }
  for (auto& v : w) v /= s;
  return w;
}

// Separable valid-mode filtering of an H×W plane into (H−k+1)×(W−k+1).
void filter_valid(const double* in, int H, int W, const std::vector<double>& w, double* out, double* scratch) {
  const int k = static_cast<int>(w.size());
  const int Ho = H - k + 1;
  const int Wo = W - k + 1;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < Wo; ++x) {
      double s = 0.0;
      for (int j = 0; j < k; ++j) s += w[static_cast<std::size_t>(j)] * in[y * W + x + j];
      scratch[y * Wo + x] = s;
    }
  }
  for (int y = 0; y < Ho; ++y) {
    for (int x = 0; x < Wo; ++x) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += w[static_cast<std::size_t>(i)] * scratch[(y + i) * Wo + x];
      out[y * Wo + x] = s;
    }
  }
}

// Adjoint of filter_valid: scatters an (H−k+1)×(W−k+1) cotangent back to H×W.
void filter_valid_adjoint(const double* gout, int H, int W, const std::vector<double>& w, double* gin,
                          double* scratch) {
  const int k = static_cast<int>(w.size());
  const int Ho = H - k + 1;
  const int Wo = W - k + 1;
  std::fill(scratch, scratch + static_cast<std::size_t>(H) * Wo, 0.0);
  for (int y = 0; y < Ho; ++y) {
    for (int x = 0; x < Wo; ++x) {
      const double g = gout[y * Wo + x];
      for (int i = 0; i < k; ++i) scratch[(y + i) * Wo + x] += w[static_cast<std::size_t>(i)] * g;
    }
  }
  std::fill(gin, gin + static_cast<std::size_t>(H) * W, 0.0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < Wo; ++x) {
      const double g = scratch[y * Wo + x];
      for (int j = 0; j < k; ++j) gin[y * W + x + j] += w[static_cast<std::size_t>(j)] * g;
    }
  }
}

}  // namespace

template <typename T>
Var<T> ssim(const Var<T>& a, const Var<T>& b, const LossConfig& cfg) {
  cfg.validate();
  require_same_shape(a.value(), b.value(), "ssim");
  require_chw(a.value(), "ssim input");
  const int C = a.value().channels();
  const int H = a.value().height();
  const int W = a.value().width();
  // Coarse pyramid levels can be smaller than the window; it then shrinks to the largest odd
  // size that fits, keeping σ.
  const int k = std::min(cfg.window, std::min(H, W) % 2 == 1 ? std::min(H, W) : std::min(H, W) - 1);
  const auto win = std::make_shared<std::vector<double>>(gaussian_window(k, cfg.sigma));
  const int Ho = H - k + 1;
  const int Wo = W - k + 1;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t oplane = static_cast<std::size_t>(Ho) * Wo;
  const double c1 = cfg.c1();
  const double c2 = cfg.c2();

  // Per-pixel partials of S with respect to the five filtered moments.
  auto partials = std::make_shared<std::vector<double>>(5 * oplane * C);
  std::vector<double> pa(plane), pb(plane), sq(plane), scratch(static_cast<std::size_t>(H) * Wo);
  std::vector<double> ma(oplane), mb(oplane), paa(oplane), pbb(oplane), pab(oplane);
  double total = 0.0;
  for (int c = 0; c < C; ++c) {
    const T* av = a.value().data() + c * plane;
    const T* bv = b.value().data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      pa[i] = av[i];
      pb[i] = bv[i];
    }
    filter_valid(pa.data(), H, W, *win, ma.data(), scratch.data());
    filter_valid(pb.data(), H, W, *win, mb.data(), scratch.data());
    for (std::size_t i = 0; i < plane; ++i) sq[i] = pa[i] * pa[i];
    filter_valid(sq.data(), H, W, *win, paa.data(), scratch.data());
    for (std::size_t i = 0; i < plane; ++i) sq[i] = pb[i] * pb[i];
    filter_valid(sq.data(), H, W, *win, pbb.data(), scratch.data());
    for (std::size_t i = 0; i < plane; ++i) sq[i] = pa[i] * pb[i];
    filter_valid(sq.data(), H, W, *win, pab.data(), scratch.data());
    double* d = partials->data() + 5 * oplane * c;
    for (std::size_t i = 0; i < oplane; ++i) {
      const double mu_a = ma[i];
      const double mu_b = mb[i];
      const double a1 = 2.0 * mu_a * mu_b + c1;
      const double a2 = 2.0 * (pab[i] - mu_a * mu_b) + c2;
      const double b1 = mu_a * mu_a + mu_b * mu_b + c1;
      const double b2 = (paa[i] - mu_a * mu_a) + (pbb[i] - mu_b * mu_b) + c2;
      const double s = (a1 * a2) / (b1 * b2);
      total += s;
      // Paired so that each bracket is exactly zero when a == b.
      d[i] = s * ((2.0 * mu_b / a1 - 2.0 * mu_a / b1) + (2.0 * mu_a / b2 - 2.0 * mu_b / a2));
      d[oplane + i] = s * ((2.0 * mu_a / a1 - 2.0 * mu_b / b1) + (2.0 * mu_b / b2 - 2.0 * mu_a / a2));
      d[2 * oplane + i] = -s / b2;
      d[3 * oplane + i] = -s / b2;
      d[4 * oplane + i] = 2.0 * s / a2;
    }
  }
  const double count = static_cast<double>(oplane) * C;
  Tensor<T> out({1}, static_cast<T>(total / count));
  return make_result<T>(std::move(out), {a, b}, [=](Node<T>& n) {
    const double g = static_cast<double>(n.grad[0]) / count;
    const auto& av = n.input_value(0);
    const auto& bv = n.input_value(1);
    std::vector<double> gm(oplane), f_ma(plane), f_mb(plane), f_aa(plane), f_bb(plane), f_ab(plane);
    std::vector<double> scr(static_cast<std::size_t>(H) * Wo);
    for (int c = 0; c < C; ++c) {
      const double* d = partials->data() + 5 * oplane * c;
      double* dst[5] = {f_ma.data(), f_mb.data(), f_aa.data(), f_bb.data(), f_ab.data()};
      for (int m = 0; m < 5; ++m) {
        for (std::size_t i = 0; i < oplane; ++i) gm[i] = g * d[m * oplane + i];
        filter_valid_adjoint(gm.data(), H, W, *win, dst[m], scr.data());
      }
      const T* ap = av.data() + c * plane;
      const T* bp = bv.data() + c * plane;
      if (n.input_needs_grad(0)) {
        T* ga = n.input_grad(0).data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          ga[i] += static_cast<T>(f_ma[i] + 2.0 * ap[i] * f_aa[i] + bp[i] * f_ab[i]);
        }
      }
      if (n.input_needs_grad(1)) {
        T* gb = n.input_grad(1).data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          gb[i] += static_cast<T>(f_mb[i] + 2.0 * bp[i] * f_bb[i] + ap[i] * f_ab[i]);
        }
      }
    }
  });
}

template <typename T>
Var<T> hybrid_loss(const std::vector<Var<T>>& outputs, const std::vector<Var<T>>& targets, const LossConfig& cfg) {
  require(!outputs.empty(), "hybrid_loss: no outputs");
  require(outputs.size() == targets.size(), "hybrid_loss: " + std::to_string(outputs.size()) + " outputs vs " +
                                                std::to_string(targets.size()) + " targets");
  Var<T> total;
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    require(outputs[k].shape() == targets[k].shape(),
            "hybrid_loss: scale " + std::to_string(k) + " shape " + shape_str(outputs[k].shape()) + " vs target " +
                shape_str(targets[k].shape()));
    Var<T> term = l1_loss(outputs[k], targets[k]);
    if (cfg.ssim_weight != 0.0) {
      Var<T> dissim = add_scalar(scale(ssim(outputs[k], targets[k], cfg), T(-1)), T(1));
      term = add(term, scale(dissim, static_cast<T>(cfg.ssim_weight)));
    }
    total = total ? add(total, term) : term;
  }
  return scale(total, T(1) / static_cast<T>(outputs.size()));
}

template <typename T>
double l1_loss(const Tensor<T>& a, const Tensor<T>& b) {
  return static_cast<double>(l1_loss(Var<T>::constant(a), Var<T>::constant(b)).value()[0]);
}

template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const LossConfig& cfg) {
  return static_cast<double>(ssim(Var<T>::constant(a), Var<T>::constant(b), cfg).value()[0]);
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak) {
  require_same_shape(a, b, "psnr");
  require(a.size() > 0, "psnr: empty tensors");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

template <typename T>
std::vector<Tensor<T>> image_pyramid(const Tensor<T>& sharp, int levels) {
  require(levels >= 1, "image_pyramid: levels must be >= 1");
  std::vector<Tensor<T>> out;
  const Var<T> s = Var<T>::constant(sharp);
  for (int k = levels - 1; k >= 0; --k) out.push_back(area_downsample(s, 1 << k).value());
  return out;
}

#define EVDEBLUR_INSTANTIATE(T)                                                                          \
  template Var<T> l1_loss<T>(const Var<T>&, const Var<T>&);                                              \
  template Var<T> ssim<T>(const Var<T>&, const Var<T>&, const LossConfig&);                              \
  template Var<T> hybrid_loss<T>(const std::vector<Var<T>>&, const std::vector<Var<T>>&, const LossConfig&); \
  template double l1_loss<T>(const Tensor<T>&, const Tensor<T>&);                                        \
  template double ssim<T>(const Tensor<T>&, const Tensor<T>&, const LossConfig&);                        \
  template double psnr<T>(const Tensor<T>&, const Tensor<T>&, double);                                   \
  template std::vector<Tensor<T>> image_pyramid<T>(const Tensor<T>&, int);

EVDEBLUR_INSTANTIATE(float)
EVDEBLUR_INSTANTIATE(double)
#undef EVDEBLUR_INSTANTIATE

}  // namespace evdeblur
