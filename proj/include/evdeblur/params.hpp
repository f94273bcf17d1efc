#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "evdeblur/autograd.hpp"
#include "evdeblur/ops.hpp"

namespace evdeblur {

/// Seeded generator with a platform-independent uniform mapping.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);
  std::uint64_t next();
  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  int uniform_int(int lo, int hi);  // inclusive bounds

 private:
  std::uint64_t state_[4];
};

enum class InitMode {
  zeros,     // every parameter 0
  standard,  // uniform ±1/√fan_in; offset predictors start at 0 (regular sampling grid)
  random,    // uniform ±1/√fan_in everywhere, offset predictors included
};

struct InitOptions {
  InitMode mode = InitMode::standard;
  std::uint64_t seed = 0;
  double scale = 1.0;
};

InitMode parse_init_mode(const std::string& name);
std::string init_mode_name(InitMode mode);

enum class ParamRole { weight, bias, offset };

template <typename T>
struct ParamEntry {
  std::string name;
  Var<T> var;
  int fan_in = 1;
  ParamRole role = ParamRole::weight;
};

/// Owns every learnable tensor of a model in registration order.
template <typename T>
class ParamStore {
 public:
  Var<T> create(const std::string& name, Shape shape, int fan_in, ParamRole role);

  const std::vector<ParamEntry<T>>& entries() const { return entries_; }
  std::vector<ParamEntry<T>>& entries() { return entries_; }
  std::vector<Var<T>> vars() const;
  std::size_t scalar_count() const;
  /// Scalar counts grouped by the first `depth` dot-separated name components.
  std::map<std::string, std::size_t> breakdown(int depth) const;
  const ParamEntry<T>* find(const std::string& name) const;

  void initialize(const InitOptions& options);
  void zero_grad();

 private:
  std::vector<ParamEntry<T>> entries_;
  std::map<std::string, std::size_t> index_;
};

template <typename T>
struct Conv {
  Var<T> weight;
  Var<T> bias;  // may be empty
  int stride = 1;
  int pad = 0;

  static Conv make(ParamStore<T>& store, const std::string& name, int cin, int cout, int k, int stride = 1,
                   bool bias = true, ParamRole role = ParamRole::weight);
  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias, stride, pad); }
  int out_channels() const { return weight.shape()[0]; }
};

template <typename T>
struct Dense {
  Var<T> weight;  // out×in
  Var<T> bias;

  static Dense make(ParamStore<T>& store, const std::string& name, int in, int out);
  Var<T> operator()(const Var<T>& x) const { return dense(x, weight, bias); }
};

}  // namespace evdeblur
