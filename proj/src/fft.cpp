#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <vector>

#include "evdeblur/kernels.hpp"

namespace evdeblur::kernels {

namespace {

// Mixed-radix decimation-in-time FFT for arbitrary lengths. Lengths are
// factored into 4, 2, 3, 5 and then any remaining primes; every stage uses
// the generic butterfly, which is O(p) per output for radix p.
template <typename T>
class FftPlan {
 public:
  explicit FftPlan(int n) : n_(n), twiddles_(static_cast<std::size_t>(n)) {
    for (int i = 0; i < n; ++i) {
      const double phase = -2.0 * std::numbers::pi * i / n;
      twiddles_[static_cast<std::size_t>(i)] = {static_cast<T>(std::cos(phase)), static_cast<T>(std::sin(phase))};
    }
    int rem = n;
    for (int p : {4, 2, 3, 5}) {
      while (rem % p == 0 && rem > 1) {
        factors_.push_back(p);
        rem /= p;
        factors_.push_back(rem);
      }
    }
    for (int p = 7; rem > 1; p += 2) {
      while (rem % p == 0) {
        factors_.push_back(p);
        rem /= p;
        factors_.push_back(rem);
      }
      if (p * p > rem && rem > 1) {
        factors_.push_back(rem);
        factors_.push_back(1);
        rem = 1;
      }
    }
    if (factors_.empty()) factors_ = {1, 1};
  }

  int size() const { return n_; }

  // out[k] = Σ_j in[j·stride]·e^{∓2πi jk/n}
  void transform(const std::complex<T>* in, std::ptrdiff_t stride, std::complex<T>* out, bool inverse) const {
    if (n_ == 1) {
      out[0] = in[0];
      return;
    }
    std::vector<std::complex<T>> scratch(static_cast<std::size_t>(maxRadix()));
    work(out, in, 1, stride, factors_.data(), inverse, scratch.data());
  }

 private:
  int maxRadix() const {
    int m = 1;
    for (std::size_t i = 0; i < factors_.size(); i += 2) m = std::max(m, factors_[i]);
    return m;
  }

  std::complex<T> twiddle(std::size_t idx, bool inverse) const {
    const auto& w = twiddles_[idx];
    return inverse ? std::conj(w) : w;
  }

  void work(std::complex<T>* out, const std::complex<T>* f, std::size_t fstride, std::ptrdiff_t in_stride,
            const int* factors, bool inverse, std::complex<T>* scratch) const {
    const int p = factors[0];
    const int m = factors[1];
    std::complex<T>* const begin = out;
    std::complex<T>* const end = out + static_cast<std::ptrdiff_t>(p) * m;
    if (m == 1) {
      for (std::complex<T>* o = out; o != end; ++o) {
        *o = *f;
        f += static_cast<std::ptrdiff_t>(fstride) * in_stride;
      }
    } else {
      for (std::complex<T>* o = out; o != end; o += m) {
        work(o, f, fstride * p, in_stride, factors + 2, inverse, scratch);
        f += static_cast<std::ptrdiff_t>(fstride) * in_stride;
      }
    }
    butterfly(begin, fstride, m, p, inverse, scratch);
  }

  void butterfly(std::complex<T>* out, std::size_t fstride, int m, int p, bool inverse,
                 std::complex<T>* scratch) const {
    const std::size_t n = static_cast<std::size_t>(n_);
    for (int u = 0; u < m; ++u) {
      for (int q = 0, k = u; q < p; ++q, k += m) scratch[q] = out[k];
      for (int q = 0, k = u; q < p; ++q, k += m) {
        std::size_t tw = 0;
        std::complex<T> acc = scratch[0];
        for (int r = 1; r < p; ++r) {
          tw += fstride * static_cast<std::size_t>(k);
          tw %= n;
          acc += scratch[r] * twiddle(tw, inverse);
        }
        out[k] = acc;
      }
    }
  }

  int n_;
  std::vector<std::complex<T>> twiddles_;
  std::vector<int> factors_;
};

template <typename T>
const FftPlan<T>& plan_for(int n) {
  static std::mutex mu;
  static std::map<int, std::unique_ptr<FftPlan<T>>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<FftPlan<T>>(n);
  return *slot;
}

}  // namespace

template <typename T>
void rfft2(const T* x, int C, int H, int W, std::complex<T>* out) {
  require(C >= 1 && H >= 1 && W >= 1, "rfft2: dims must be >= 1");
  const int Wf = W / 2 + 1;
  const auto& row_plan = plan_for<T>(W);
  const auto& col_plan = plan_for<T>(H);
#pragma omp parallel for schedule(static) if (static_cast<long>(C) * H * W > (1 << 14))
  for (int c = 0; c < C; ++c) {
    std::vector<std::complex<T>> row_in(static_cast<std::size_t>(W));
    std::vector<std::complex<T>> row_out(static_cast<std::size_t>(W));
    std::vector<std::complex<T>> col(static_cast<std::size_t>(H));
    std::complex<T>* spec = out + static_cast<std::size_t>(c) * H * Wf;
    const T* plane = x + static_cast<std::size_t>(c) * H * W;
    for (int h = 0; h < H; ++h) {
      for (int w = 0; w < W; ++w) row_in[static_cast<std::size_t>(w)] = {plane[static_cast<std::size_t>(h) * W + w], T(0)};
      row_plan.transform(row_in.data(), 1, row_out.data(), false);
      std::copy(row_out.begin(), row_out.begin() + Wf, spec + static_cast<std::size_t>(h) * Wf);
    }
    for (int l = 0; l < Wf; ++l) {
      col_plan.transform(spec + l, Wf, col.data(), false);
      for (int h = 0; h < H; ++h) spec[static_cast<std::size_t>(h) * Wf + l] = col[static_cast<std::size_t>(h)];
    }
  }
}

template <typename T>
void irfft2(const std::complex<T>* in, int C, int H, int W, T* out) {
  require(C >= 1 && H >= 1 && W >= 1, "irfft2: dims must be >= 1");
  const int Wf = W / 2 + 1;
  const auto& row_plan = plan_for<T>(W);
  const auto& col_plan = plan_for<T>(H);
  const T scale = T(1) / static_cast<T>(static_cast<double>(H) * W);
#pragma omp parallel for schedule(static) if (static_cast<long>(C) * H * W > (1 << 14))
  for (int c = 0; c < C; ++c) {
    std::vector<std::complex<T>> tmp(static_cast<std::size_t>(H) * Wf);
    std::vector<std::complex<T>> col(static_cast<std::size_t>(H));
    std::vector<std::complex<T>> row(static_cast<std::size_t>(W));
    std::vector<std::complex<T>> row_out(static_cast<std::size_t>(W));
    const std::complex<T>* spec = in + static_cast<std::size_t>(c) * H * Wf;
    for (int l = 0; l < Wf; ++l) {
      col_plan.transform(spec + l, Wf, col.data(), true);
      for (int h = 0; h < H; ++h) tmp[static_cast<std::size_t>(h) * Wf + l] = col[static_cast<std::size_t>(h)];
    }
    T* plane = out + static_cast<std::size_t>(c) * H * W;
    for (int h = 0; h < H; ++h) {
      const std::complex<T>* z = tmp.data() + static_cast<std::size_t>(h) * Wf;
      for (int l = 0; l < Wf; ++l) row[static_cast<std::size_t>(l)] = z[l];
      // Hermitian completion of the bins the half spectrum leaves out.
      for (int l = Wf; l < W; ++l) row[static_cast<std::size_t>(l)] = std::conj(z[W - l]);
      row_plan.transform(row.data(), 1, row_out.data(), true);
      for (int w = 0; w < W; ++w) plane[static_cast<std::size_t>(h) * W + w] = row_out[static_cast<std::size_t>(w)].real() * scale;
    }
  }
}

template void rfft2<float>(const float*, int, int, int, std::complex<float>*);
template void rfft2<double>(const double*, int, int, int, std::complex<double>*);
template void irfft2<float>(const std::complex<float>*, int, int, int, float*);
template void irfft2<double>(const std::complex<double>*, int, int, int, double*);

}  // namespace evdeblur::kernels
