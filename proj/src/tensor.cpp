#include "evdeblur/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace evdeblur {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    require(d >= 0, "negative dimension in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ')';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  require(data_.size() == shape_numel(shape_), "tensor data length " + std::to_string(data_.size()) +
                                                   " does not match shape " + shape_str(shape_));
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  require(shape_numel(shape) == data_.size(),
          "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  return Tensor(std::move(shape), data_);
}

template <typename T>
void Tensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.storage().begin(), t.storage().end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
void require_finite(const Tensor<T>& t, std::string_view what) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      throw ContractViolation(std::string(what) + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

template <typename T>
void require_chw(const Tensor<T>& t, std::string_view what) {
  if (t.ndim() != 3) {
    throw ContractViolation(std::string(what) + ": expected C×H×W tensor, got shape " + shape_str(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, std::string_view what) {
  if (a.shape() != b.shape()) {
    throw ContractViolation(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
  }
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "max_abs_diff");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<T>(std::abs(a[i] - b[i])));
  return m;
}

#define EVDEBLUR_INSTANTIATE(T)                                              \
  template class Tensor<T>;                                                  \
  template bool all_finite<T>(const Tensor<T>&);                             \
  template void require_finite<T>(const Tensor<T>&, std::string_view);       \
  template void require_chw<T>(const Tensor<T>&, std::string_view);          \
  template void require_same_shape<T>(const Tensor<T>&, const Tensor<T>&, std::string_view); \
  template T max_abs_diff<T>(const Tensor<T>&, const Tensor<T>&);

EVDEBLUR_INSTANTIATE(float)
EVDEBLUR_INSTANTIATE(double)
#undef EVDEBLUR_INSTANTIATE

template class Tensor<int>;

}  // namespace evdeblur
