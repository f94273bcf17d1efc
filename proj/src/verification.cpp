#include "evdeblur/verification.hpp"

#include <chrono>
#include <functional>

#include "evdeblur/deffe.hpp"
#include "evdeblur/dlefnet.hpp"
#include "evdeblur/metrics.hpp"
#include "evdeblur/ops.hpp"
#include "evdeblur/params.hpp"

namespace evdeblur {

Tensor<double> random_tensor(const Shape& shape, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  Tensor<double> t(shape);
  for (auto& v : t.storage()) v = rng.uniform(lo, hi);
  return t;
}

namespace {

using V = Var<double>;

constexpr double kOpTol = 1e-5;
constexpr double kModelTol = 1e-4;

// Largest allowed step plus five decades of search: ReLU and bilinear kinks sit close to random
// points, and many components are small enough to drown in roundoff at a fixed tiny step.
GradCheckOptions searched() {
  GradCheckOptions o;
  o.eps = 1e-3;
  o.step_search = 5;
  return o;
}

struct Suite {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;
  std::vector<CheckResult> results;

  std::uint64_t next_seed() { return seed * 1000003ULL + ++counter; }
  V param(const Shape& s, double lo = -1.0, double hi = 1.0) { return V::parameter(random_tensor(s, next_seed(), lo, hi)); }
  V constant(const Shape& s, double lo = -1.0, double hi = 1.0) {
    return V::constant(random_tensor(s, next_seed(), lo, hi));
  }
  // Random linear functional of one or more outputs, so every output entry gets a distinct cotangent.
  std::function<V(const std::vector<V>&)> projector() {
    auto weights = std::make_shared<std::vector<Tensor<double>>>();
    const std::uint64_t s = next_seed();
    return [weights, s](const std::vector<V>& outs) {
      for (std::size_t k = weights->size(); k < outs.size(); ++k) weights->push_back(random_tensor(outs[k].shape(), s + k));
      V total;
      for (std::size_t k = 0; k < outs.size(); ++k) {
        V term = weighted_sum(outs[k], (*weights)[k]);
        total = total ? add(total, term) : term;
      }
      return total;
    };
  }

  void run(const std::string& name, double tol, const std::function<std::vector<V>()>& f, std::vector<V> wrt,
           GradCheckOptions opt = searched()) {
    const auto start = std::chrono::steady_clock::now();
    auto project = projector();
    CheckResult r;
    r.name = name;
    r.tolerance = tol;
    try {
      const GradCheckReport rep = grad_check([&] { return project(f()); }, wrt, opt);
      r.max_rel_error = rep.max_rel_error;
      r.coordinates = rep.coordinates;
      r.passed = rep.passed(tol);
      r.detail = rep.finite ? "worst coordinate " + std::to_string(rep.worst_index) : rep.message;
    } catch (const std::exception& e) {
      r.passed = false;
      r.detail = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    results.push_back(std::move(r));
  }
};

std::vector<V> with(const ParamStore<double>& store, std::initializer_list<V> extra) {
  std::vector<V> out = store.vars();
  out.insert(out.end(), extra.begin(), extra.end());
  return out;
}

void init_random(ParamStore<double>& store, std::uint64_t seed) {
  store.initialize({InitMode::random, seed, 1.0});
}

}  // namespace

std::vector<CheckResult> run_gradient_suite(std::uint64_t seed) {
  Suite s;
  s.seed = seed;

  {  // conv2d, stride 1 and 2
    V x = s.param({2, 5, 5});
    V w = s.param({3, 2, 3, 3});
    V b = s.param({3});
    s.run("conv2d", kOpTol, [=] { return std::vector<V>{conv2d(x, w, b, 1, 1)}; }, {x, w, b});
    s.run("conv2d_stride2", kOpTol, [=] { return std::vector<V>{conv2d(x, w, b, 2, 1)}; }, {x, w, b});
    V w1 = s.param({3, 2, 1, 1});
    s.run("conv2d_pointwise", kOpTol, [=] { return std::vector<V>{conv2d(x, w1, b, 1, 0)}; }, {x, w1, b});
  }
  {  // deformable conv with fractional offsets
    V x = s.param({2, 5, 5});
    V w = s.param({3, 2, 3, 3});
    V b = s.param({3});
    V off = s.param({18, 5, 5}, -1.5, 1.5);
    s.run("deformable_conv2d", kOpTol, [=] { return std::vector<V>{deformable_conv2d(x, off, w, b, 1, 1)}; },
          {x, off, w, b});
    V off2 = s.param({18, 3, 3}, -1.5, 1.5);
    s.run("deformable_conv2d_stride2", kOpTol,
          [=] { return std::vector<V>{deformable_conv2d(x, off2, w, b, 2, 1)}; }, {x, off2, w, b});
  }
  {  // pointwise ops and reshaping
    V x = s.param({2, 4, 5});
    V y = s.param({2, 4, 5});
    s.run("elementwise", kOpTol,
          [=] { return std::vector<V>{sigmoid(x), tanh(x), relu(x), mul(x, y), sub(x, y)}; }, {x, y});
    V a = s.param({2});
    V m = s.param({1, 4, 5});
    V k = s.param({1});
    s.run("broadcast_mul", kOpTol,
          [=] { return std::vector<V>{channel_mul(x, a), spatial_mul(x, m), scalar_mul(k, x)}; }, {x, a, m, k});
    V W = s.param({3, 2});
    V bb = s.param({3});
    s.run("gap_dense", kOpTol, [=] { return std::vector<V>{dense(global_avg_pool(x), W, bb)}; }, {x, W, bb});
    s.run("rfft2", kOpTol, [=] { return std::vector<V>{rfft2(x)}; }, {x});
    V spec = s.param({4, 4, 3});
    s.run("irfft2_odd_width", kOpTol, [=] { return std::vector<V>{irfft2(spec, 5)}; }, {spec});
    s.run("irfft2_even_width", kOpTol, [=] { return std::vector<V>{irfft2(spec, 4)}; }, {spec});
    s.run("channel_ops", kOpTol,
          [=] {
            return std::vector<V>{channel_max_mean(x), concat_channels<double>({x, y}), slice_channels(x, 1, 1)};
          },
          {x, y});
    V z = s.param({2, 4, 4});
    s.run("resampling", kOpTol,
          [=] {
            return std::vector<V>{resize_bilinear(z, 8, 8), resize_bilinear(z, 2, 3), area_downsample(z, 2),
                                  reflect_pad(z, 3, 2), crop(z, 3, 2)};
          },
          {z});
  }
  {  // losses
    V a = s.param({3, 12, 13}, 0.0, 1.0);
    V b = s.param({3, 12, 13}, 0.0, 1.0);
    LossConfig cfg;
    s.run("ssim", kOpTol, [=] { return std::vector<V>{ssim(a, b, cfg)}; }, {a, b});
    s.run("l1_loss", kOpTol, [=] { return std::vector<V>{l1_loss(a, b)}; }, {a, b});
  }

  DeffeConfig dcfg;
  dcfg.hidden_channels = 2;
  for (LSTMVariant variant : {LSTMVariant::literal, LSTMVariant::standard}) {
    ParamStore<double> store;
    dcfg.variant = variant;
    const CellParams<double> cell = CellParams<double>::make(store, "cell", dcfg);
    init_random(store, s.next_seed());
    V e = V::constant(Tensor<double>({1, 4, 4}, std::vector<double>{1, 0, -1, 0, 0, 1, 1, 0, -1, 0, 0, 1, 0, -1, 0, 1}));
    V h = s.param({2, 4, 4});
    V c = s.param({2, 4, 4});
    V img = s.param({3, 4, 4}, 0.0, 1.0);
    s.run("cell_step_" + lstm_variant_name(variant), kOpTol,
          [=] {
            LSTMState<double> st;
            st.hidden = h;
            st.cell = c;
            st.fe_acc = V::constant(Tensor<double>({2, 4, 4}));
            const auto out = cell_step_with_image(e, st, img, cell, variant);
            return std::vector<V>{out.state.hidden, out.state.cell, out.state.fe_acc};
          },
          with(store, {h, c, img}));
  }
  {
    ParamStore<double> store;
    const CellParams<double> cell = CellParams<double>::make(store, "cell", dcfg);
    init_random(store, s.next_seed());
    V h = s.param({2, 4, 4});
    s.run("hidden_attention", kOpTol, [=] { return std::vector<V>{hidden_attention(h, cell)}; },
          {cell.attention1.weight, cell.attention1.bias, cell.attention2.weight, cell.attention2.bias, h});
  }
  {
    ParamStore<double> store;
    dcfg.variant = LSTMVariant::literal;
    const DeffeParams<double> p = DeffeParams<double>::make(store, "deffe", dcfg);
    init_random(store, s.next_seed());
    std::vector<V> frames;
    Rng rng(s.next_seed());
    for (int i = 0; i < 4; ++i) {
      Tensor<double> f({1, 4, 4});
      for (auto& v : f.storage()) v = static_cast<double>(rng.uniform_int(-1, 1));
      frames.push_back(V::constant(f));
    }
    V img = s.param({3, 4, 4}, 0.0, 1.0);
    s.run("deffe_forward", kModelTol, [=] { return std::vector<V>{deffe_forward(frames, img, p)}; },
          with(store, {img}));
  }
  {
    ParamStore<double> store;
    const ResFftBlock<double> blk = ResFftBlock<double>::make(store, "block", 2, 3);
    init_random(store, s.next_seed());
    V x = s.param({2, 4, 4});
    s.run("res_fft_block", kOpTol, [=] { return std::vector<V>{blk(x)}; }, with(store, {x}));
    V x5 = s.param({2, 4, 5});
    s.run("res_fft_block_odd_width", kOpTol, [=] { return std::vector<V>{blk(x5)}; }, with(store, {x5}));
  }
  {
    ParamStore<double> store;
    const Eica<double> eica = Eica<double>::make(store, "eica", 4, 4);
    init_random(store, s.next_seed());
    V f = s.param({4, 4, 4});
    V e = s.param({4, 4, 4});
    s.run("eica_fuse", kOpTol, [=] { return std::vector<V>{eica(f, e)}; }, with(store, {f, e}));
  }
  {
    ParamStore<double> store;
    const Aff<double> aff = Aff<double>::make(store, "aff", 2 + 3 + 4, 3);
    init_random(store, s.next_seed());
    V a = s.param({2, 8, 8});
    V b = s.param({3, 4, 4});
    V c = s.param({4, 2, 2});
    s.run("aff_fuse", kOpTol, [=] { return std::vector<V>{aff({a, b, c}, 4, 4)}; }, with(store, {a, b, c}));
  }
  {
    const NetworkConfig cfg = NetworkConfig::tiny();
    ParamStore<double> store;
    const EventEncoder<double> enc = EventEncoder<double>::make(store, "event_encoder", cfg);
    init_random(store, s.next_seed());
    V fe = s.param({cfg.event_channels, 8, 8});
    s.run("event_encoder", kOpTol, [=] { return enc(fe); }, with(store, {fe}));
  }
  {
    const NetworkConfig cfg = NetworkConfig::tiny();
    auto net = std::make_shared<DlefNet<double>>(cfg);
    init_random(net->params(), s.next_seed());
    V img = s.param({3, 8, 8}, 0.0, 1.0);
    std::vector<V> frames;
    Rng rng(s.next_seed());
    for (int i = 0; i < 4; ++i) {
      Tensor<double> f({1, 8, 8});
      for (auto& v : f.storage()) v = static_cast<double>(rng.uniform_int(-1, 1));
      frames.push_back(V::constant(f));
    }
    GradCheckOptions opt = searched();
    opt.max_coords_per_tensor = 6;
    opt.seed = s.next_seed();
    s.run("dlefnet_full", kModelTol, [=] { return net->forward(img, frames); }, with(net->params(), {img}),
          opt);
  }
  return s.results;
}

}  // namespace evdeblur
