#include "evdeblur/params.hpp"

#include <cmath>

namespace evdeblur {

namespace {
inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

// xoshiro256** seeded through splitmix64: small, fast and identical everywhere.
Rng::Rng(std::uint64_t seed) {
  std::uint64_t z = seed;
  for (auto& s : state_) {
    z += 0x9e3779b97f4a7c15ULL;
    std::uint64_t v = z;
    v = (v ^ (v >> 30)) * 0xbf58476d1ce4e5b9ULL;
    v = (v ^ (v >> 27)) * 0x94d049bb133111ebULL;
    s = v ^ (v >> 31);
  }
}

std::uint64_t Rng::next() {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int Rng::uniform_int(int lo, int hi) {
  require(hi >= lo, "Rng::uniform_int: empty range");
  const std::uint64_t span = static_cast<std::uint64_t>(static_cast<std::int64_t>(hi) - lo) + 1;
  return lo + static_cast<int>(next() % span);
}

InitMode parse_init_mode(const std::string& name) {
  if (name == "zeros") return InitMode::zeros;
  if (name == "standard") return InitMode::standard;
  if (name == "random") return InitMode::random;
  throw ContractViolation("unknown init mode '" + name + "' (expected zeros|standard|random)");
}

std::string init_mode_name(InitMode mode) {
  switch (mode) {
    case InitMode::zeros:
      return "zeros";
    case InitMode::standard:
      return "standard";
    case InitMode::random:
      return "random";
  }
  return "standard";
}

template <typename T>
Var<T> ParamStore<T>::create(const std::string& name, Shape shape, int fan_in, ParamRole role) {
  require(!index_.count(name), "ParamStore: duplicate parameter name '" + name + "'");
  require(fan_in >= 1, "ParamStore: fan_in must be >= 1 for '" + name + "'");
  Var<T> v = Var<T>::parameter(Tensor<T>(std::move(shape)));
  index_[name] = entries_.size();
  entries_.push_back({name, v, fan_in, role});
  return v;
}

template <typename T>
std::vector<Var<T>> ParamStore<T>::vars() const {
  std::vector<Var<T>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.var);
  return out;
}

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.var.size();
  return n;
}

template <typename T>
std::map<std::string, std::size_t> ParamStore<T>::breakdown(int depth) const {
  std::map<std::string, std::size_t> out;
  for (const auto& e : entries_) {
    std::size_t pos = std::string::npos;
    std::size_t from = 0;
    for (int d = 0; d < depth; ++d) {
      pos = e.name.find('.', from);
      if (pos == std::string::npos) break;
      from = pos + 1;
    }
    out[e.name.substr(0, pos)] += e.var.size();
  }
  return out;
}

template <typename T>
const ParamEntry<T>* ParamStore<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

template <typename T>
void ParamStore<T>::initialize(const InitOptions& options) {
  Rng rng(options.seed);
  for (auto& e : entries_) {
    Tensor<T>& v = e.var.mutable_value();
    const bool zero = options.mode == InitMode::zeros ||
                      (options.mode == InitMode::standard && e.role == ParamRole::offset);
    const double bound = options.scale / std::sqrt(static_cast<double>(e.fan_in));
    // Draw even for zeroed tensors so a parameter's values never depend on
    // the roles of the ones registered before it.
    for (auto& x : v.storage()) {
      const double u = rng.uniform(-bound, bound);
      x = zero ? T(0) : static_cast<T>(u);
    }
  }
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& e : entries_) e.var.zero_grad();
}

template <typename T>
Conv<T> Conv<T>::make(ParamStore<T>& store, const std::string& name, int cin, int cout, int k, int stride, bool bias,
                      ParamRole role) {
  Conv c;
  const int fan_in = cin * k * k;
  c.weight = store.create(name + ".weight", {cout, cin, k, k}, fan_in, role);
  if (bias) c.bias = store.create(name + ".bias", {cout}, fan_in, role);
  c.stride = stride;
  c.pad = (k - 1) / 2;
  return c;
}

template <typename T>
Dense<T> Dense<T>::make(ParamStore<T>& store, const std::string& name, int in, int out) {
  Dense d;
  d.weight = store.create(name + ".weight", {out, in}, in, ParamRole::weight);
  d.bias = store.create(name + ".bias", {out}, in, ParamRole::weight);
  return d;
}

template class ParamStore<float>;
template class ParamStore<double>;
template struct Conv<float>;
template struct Conv<double>;
template struct Dense<float>;
template struct Dense<double>;

}  // namespace evdeblur
