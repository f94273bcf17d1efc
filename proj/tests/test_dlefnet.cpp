#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "doctest.h"
#include "evdeblur/dlefnet.hpp"
#include "evdeblur/gradcheck.hpp"
#include "oracles.hpp"

using namespace evdeblur;
using V = Var<double>;

namespace {

void init(ParamStore<double>& store, InitMode mode, std::uint64_t seed, double scale = 1.0) {
  InitOptions o;
  o.mode = mode;
  o.seed = seed;
  o.scale = scale;
  store.initialize(o);
}

V rand_var(const Shape& s, std::uint64_t seed, double lo = -1, double hi = 1, bool param = false) {
  std::mt19937_64 rng(seed);
  Tensor<double> t = oracle::random(s, rng, lo, hi);
  return param ? V::parameter(t) : V::constant(t);
}

std::vector<V> frames(int n, int H, int W, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(-1, 1);
  std::vector<V> out;
  for (int i = 0; i < n; ++i) {
    Tensor<double> t({1, H, W});
    for (auto& v : t.storage()) v = u(rng);
    out.push_back(V::constant(t));
  }
  return out;
}

// Largest step plus a five-decade search, as in the shipped suite.
GradCheckOptions searched(std::size_t max_coords = 0) {
  GradCheckOptions o;
  o.eps = 1e-3;
  o.step_search = 5;
  o.max_coords_per_tensor = max_coords;
  return o;
}

double projected_error(const std::function<std::vector<V>()>& f, const std::vector<V>& wrt, std::uint64_t seed,
                       GradCheckOptions opt = searched()) {
  auto ws = std::make_shared<std::vector<Tensor<double>>>();
  auto g = [&, ws] {
    const auto outs = f();
    std::mt19937_64 rng(seed);
    if (ws->empty()) {
      for (const auto& o : outs) ws->push_back(oracle::random(o.shape(), rng));
    }
    V total;
    for (std::size_t k = 0; k < outs.size(); ++k) {
      V t = weighted_sum(outs[k], (*ws)[k]);
      total = total ? add(total, t) : t;
    }
    return total;
  };
  const auto rep = grad_check(g, wrt, opt);
  REQUIRE(rep.finite);
  return rep.max_rel_error;
}

std::vector<V> plus(std::vector<V> a, std::initializer_list<V> b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::size_t conv_n(int cin, int cout, int k) { return static_cast<std::size_t>(cout) * cin * k * k + cout; }
std::size_t dense_n(int in, int out) { return static_cast<std::size_t>(out) * in + out; }

// Layer-by-layer count of the desk configuration.
std::size_t desk_hand_count() {
  const int c[3] = {8, 16, 32};
  const int h = 4;  // hidden channels per direction
  auto term = [&](int cin, bool bias) { return conv_n(cin, 18, 3) + static_cast<std::size_t>(4 * h) * cin * 9 + (bias ? 4 * h : 0); };
  const std::size_t cell = term(1, false) + term(h, false) + term(3, true) + dense_n(h, 2) + dense_n(2, 1);
  std::size_t total = 2 * cell;
  total += conv_n(8, 8, 3) + conv_n(8, 16, 3) + conv_n(16, 32, 3);
  auto block = [&](int ch) { return 2 * conv_n(ch, ch, 3) + 2 * conv_n(2 * ch, 2 * ch, 1); };
  auto eica = [&](int ch) {
    const int mid = std::max(1, ch / 4);
    return dense_n(ch, mid) + dense_n(mid, ch) + conv_n(2, 1, 7);
  };
  const int lift_in[3] = {3, 8, 16};
  for (int k = 0; k < 3; ++k) total += conv_n(lift_in[k], c[k], 3) + 2 * block(c[k]) + eica(c[k]);
  for (int k = 0; k < 3; ++k) {
    total += conv_n(56, c[k], 1) + 2 * block(c[k]) + conv_n(c[k], 3, 3);
    if (k < 2) total += conv_n(c[k + 1], c[k], 3) + conv_n(2 * c[k], c[k], 1);
  }
  return total;
}

}  // namespace

TEST_SUITE("dlefnet") {
  TEST_CASE("res_fft_block") {
    ParamStore<double> store;
    const auto blk = ResFftBlock<double>::make(store, "b", 3, 3);
    init(store, InitMode::zeros, 1);
    const V x = rand_var({3, 6, 5}, 2);
    CHECK(max_abs_diff(blk(x).value(), x.value()) == 0.0);

    init(store, InitMode::random, 3);
    for (Shape s : {Shape{3, 4, 4}, Shape{3, 7, 5}, Shape{3, 1, 9}, Shape{3, 6, 2}}) {
      CHECK(blk(rand_var(s, 4)).shape() == s);
    }
    CHECK_THROWS_AS(blk(rand_var({2, 4, 4}, 5)), ContractViolation);

    ParamStore<double> s2;
    const auto b2 = ResFftBlock<double>::make(s2, "b", 2, 3);
    init(s2, InitMode::random, 6);
    for (int w : {4, 5}) {
      const V in = rand_var({2, 4, w}, 7, -1, 1, true);
      CHECK(projected_error([&] { return std::vector<V>{b2(in)}; }, plus(s2.vars(), {in}), 8) <= 1e-5);
    }
  }

  TEST_CASE("eica_fuse") {
    ParamStore<double> store;
    const auto e = Eica<double>::make(store, "e", 4, 4);
    init(store, InitMode::zeros, 1);
    const V F = rand_var({4, 5, 5}, 1), E = rand_var({4, 5, 5}, 2);
    const auto fused = e(F, E).value();
    for (std::size_t i = 0; i < fused.size(); ++i) {
      CHECK(fused[i] == doctest::Approx(0.25 * F.value()[i] + E.value()[i]).epsilon(1e-14));
    }
    const auto only = e(F, V::constant(Tensor<double>({4, 5, 5}))).value();
    for (std::size_t i = 0; i < only.size(); ++i) CHECK(only[i] == doctest::Approx(0.25 * F.value()[i]));
    CHECK(e(F, E).shape() == F.shape());
    CHECK_THROWS_AS(e(F, rand_var({4, 5, 4}, 3)), ContractViolation);
    CHECK_THROWS_AS(e(rand_var({3, 5, 5}, 3), rand_var({3, 5, 5}, 4)), ContractViolation);

    init(store, InitMode::random, 9);
    const V Fp = rand_var({4, 4, 4}, 10, -1, 1, true), Ep = rand_var({4, 4, 4}, 11, -1, 1, true);
    CHECK(projected_error([&] { return std::vector<V>{e(Fp, Ep)}; }, plus(store.vars(), {Fp, Ep}), 12) <= 1e-5);
  }

  TEST_CASE("aff_fuse") {
    ParamStore<double> store;
    const auto a = Aff<double>::make(store, "a", 2 + 4 + 8, 3);
    init(store, InitMode::random, 1);
    const std::vector<V> zeros{V::constant(Tensor<double>({2, 8, 8})), V::constant(Tensor<double>({4, 4, 4})),
                               V::constant(Tensor<double>({8, 2, 2}))};
    const auto out = a(zeros, 4, 4).value();
    CHECK(out.shape() == Shape{3, 4, 4});
    const auto& bias = a.mix.bias.value();
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < 16; ++i) CHECK(out[static_cast<std::size_t>(c) * 16 + i] == bias[static_cast<std::size_t>(c)]);
    }
    // All-ones mixing weights sum the channels: 14 channels of value 0.5 give 7 plus the bias.
    a.mix.weight.node()->value.fill(1.0);
    a.mix.bias.node()->value.fill(0.25);
    const std::vector<V> consts{V::constant(Tensor<double>({2, 8, 8}, 0.5)), V::constant(Tensor<double>({4, 4, 4}, 0.5)),
                                V::constant(Tensor<double>({8, 2, 2}, 0.5))};
    for (auto [h, w] : {std::pair{8, 8}, std::pair{4, 4}, std::pair{2, 2}}) {
      const auto o = a(consts, h, w).value();
      CHECK(o.shape() == Shape{3, h, w});
      for (double v : o.storage()) CHECK(v == doctest::Approx(7.25).epsilon(1e-14));
    }
    CHECK_THROWS_AS(a({zeros[0], zeros[1]}, 4, 4), ContractViolation);
  }

  TEST_CASE("event_encoder channel plan") {
    const NetworkConfig cfg = NetworkConfig::full();
    ParamStore<float> store;
    const auto enc = EventEncoder<float>::make(store, "ee", cfg);
    InitOptions z;
    z.mode = InitMode::zeros;
    store.initialize(z);
    const auto out = enc(Var<float>::constant(Tensor<float>({32, 64, 64})));
    REQUIRE(out.size() == 3);
    CHECK(out[0].shape() == Shape{32, 64, 64});
    CHECK(out[1].shape() == Shape{64, 32, 32});
    CHECK(out[2].shape() == Shape{128, 16, 16});
    for (const auto& o : out) {
      for (float v : o.value().storage()) CHECK(v == 0.0f);
    }
    CHECK_THROWS_AS(enc(Var<float>::constant(Tensor<float>({32, 10, 8}))), ContractViolation);

    const NetworkConfig tiny = NetworkConfig::tiny();
    ParamStore<double> ds;
    const auto te = EventEncoder<double>::make(ds, "ee", tiny);
    init(ds, InitMode::random, 3);
    const V fe = rand_var({tiny.event_channels, 8, 8}, 4, -1, 1, true);
    CHECK(projected_error([&] { return te(fe); }, plus(ds.vars(), {fe}), 5) <= 1e-5);
  }

  TEST_CASE("encoder and decoder pyramids on the full configuration") {
    const NetworkConfig cfg = NetworkConfig::full();
    ParamStore<float> store;
    const auto enc = Encoder<float>::make(store, "encoder", cfg);
    const auto dec = Decoder<float>::make(store, "decoder", cfg);
    InitOptions o;
    o.seed = 4;
    store.initialize(o);
    std::mt19937_64 rng(1);
    const auto B = Var<float>::constant(oracle::random({3, 64, 64}, rng, 0, 1).cast<float>());
    const std::vector<Var<float>> events{Var<float>::constant(Tensor<float>({32, 64, 64}, 0.1f)),
                                         Var<float>::constant(Tensor<float>({64, 32, 32}, 0.1f)),
                                         Var<float>::constant(Tensor<float>({128, 16, 16}, 0.1f))};
    const auto F = enc(B, events);
    REQUIRE(F.size() == 3);
    CHECK(F[0].shape() == Shape{32, 64, 64});
    CHECK(F[1].shape() == Shape{64, 32, 32});
    CHECK(F[2].shape() == Shape{128, 16, 16});
    const auto S = dec(F, B);
    REQUIRE(S.size() == 3);
    CHECK(S[0].shape() == Shape{3, 16, 16});
    CHECK(S[1].shape() == Shape{3, 32, 32});
    CHECK(S[2].shape() == Shape{3, 64, 64});
    for (const auto& s : S) CHECK(all_finite(s.value()));
    CHECK_THROWS_AS(enc(Var<float>::constant(Tensor<float>({3, 62, 64})), events), ContractViolation);
    CHECK_THROWS_AS(dec({F[0], F[2], F[1]}, B), ContractViolation);
  }

  TEST_CASE("zero parameters: encoder stays finite, decoder returns the blurry pyramid") {
    DlefNet<double> net(NetworkConfig::tiny());
    init(net.params(), InitMode::zeros, 1);
    const V B = rand_var({3, 16, 12}, 2, 0, 1);
    const auto fr = frames(5, 16, 12, 3);
    const auto outs = net.forward(B, fr);
    REQUIRE(outs.size() == 3);
    for (int k = 0; k < 3; ++k) {
      const int f = 1 << (2 - k);
      const auto& o = outs[static_cast<std::size_t>(k)].value();
      REQUIRE(o.shape() == Shape{3, 16 / f, 12 / f});
      for (int c = 0; c < 3; ++c) {
        for (int i = 0; i < o.height(); ++i) {
          for (int j = 0; j < o.width(); ++j) {
            double m = 0;
            for (int a = 0; a < f; ++a) {
              for (int b = 0; b < f; ++b) m += B.value().at(c, i * f + a, j * f + b);
            }
            m /= f * f;
            CHECK(o.at(c, i, j) == doctest::Approx(m).epsilon(1e-12));
            CHECK(std::abs(o.at(c, i, j)) <= 10.0);
          }
        }
      }
    }
    const auto F = net.encoder()(B, net.event_encoder()(deffe_forward(fr, B, net.deffe())));
    for (const auto& f : F) CHECK(all_finite(f.value()));
  }

  TEST_CASE("random parameters scaled ×10 keep outputs finite") {
    DlefNet<float> net(NetworkConfig::desk());
    InitOptions o;
    o.mode = InitMode::random;
    o.seed = 5;
    o.scale = 10.0;
    net.params().initialize(o);
    std::mt19937_64 rng(2);
    EventFrameStack st;
    st.bin_us = 1000;
    st.frames = Tensor<float>({4, 16, 16});
    for (auto& v : st.frames.storage()) v = static_cast<float>(std::uniform_int_distribution<int>(-1, 1)(rng));
    for (const auto& out : net.forward(oracle::random({3, 16, 16}, rng, 0, 1).cast<float>(), st)) {
      CHECK(all_finite(out.value()));
    }
  }

  TEST_CASE("forward on 3×64×64 with n = 8 and the 7..13 range") {
    DlefNet<float> net(NetworkConfig::desk());
    InitOptions o;
    o.seed = 6;
    net.params().initialize(o);
    const std::size_t params = net.params().scalar_count();
    std::mt19937_64 rng(3);
    const Tensor<float> B = oracle::random({3, 64, 64}, rng, 0, 1).cast<float>();
    auto stack = [&](int n, int H, int W) {
      EventFrameStack st;
      st.bin_us = 1000;
      st.frames = Tensor<float>({n, H, W});
      for (auto& v : st.frames.storage()) v = static_cast<float>(std::uniform_int_distribution<int>(-1, 1)(rng));
      return st;
    };
    const auto outs = net.forward(B, stack(8, 64, 64));
    REQUIRE(outs.size() == 3);
    CHECK(outs[0].shape() == Shape{3, 16, 16});
    CHECK(outs[1].shape() == Shape{3, 32, 32});
    CHECK(outs[2].shape() == Shape{3, 64, 64});
    const Tensor<float> small = oracle::random({3, 16, 16}, rng, 0, 1).cast<float>();
    for (int n : {7, 13}) {
      const auto o2 = net.forward(small, stack(n, 16, 16));
      CHECK(o2.back().shape() == Shape{3, 16, 16});
    }
    CHECK(net.params().scalar_count() == params);
  }

  TEST_CASE("variable frame counts 2..32 with one parameter set") {
    DlefNet<double> net(NetworkConfig::tiny());
    init(net.params(), InitMode::standard, 7);
    const std::size_t params = net.params().scalar_count();
    const V B = rand_var({3, 8, 8}, 8, 0, 1);
    for (int n = 2; n <= 32; ++n) {
      const auto outs = net.forward(B, frames(n, 8, 8, static_cast<std::uint64_t>(n)));
      REQUIRE(outs.size() == 3);
      CHECK(outs[2].shape() == Shape{3, 8, 8});
      CHECK(all_finite(outs[2].value()));
    }
    CHECK(net.params().scalar_count() == params);
    CHECK_THROWS_AS(net.forward(B, frames(1, 8, 8, 1)), ContractViolation);
    CHECK_THROWS_AS(net.forward(B, frames(3, 8, 4, 1)), ContractViolation);
  }

  TEST_CASE("pyramid shapes for any dims divisible by 4") {
    DlefNet<double> net(NetworkConfig::tiny());
    init(net.params(), InitMode::standard, 9);
    for (auto [H, W] : {std::pair{8, 12}, std::pair{12, 8}, std::pair{4, 16}, std::pair{20, 4}}) {
      const auto outs = net.forward(rand_var({3, H, W}, 10, 0, 1), frames(3, H, W, 11));
      for (int k = 0; k < 3; ++k) {
        const int f = 1 << (2 - k);
        CHECK(outs[static_cast<std::size_t>(k)].shape() == Shape{3, H / f, W / f});
      }
    }
    CHECK_THROWS_AS(net.forward(rand_var({3, 10, 8}, 1), frames(3, 10, 8, 1)), ContractViolation);
  }

  TEST_CASE("parameter counts") {
    const ParamReport full = param_count(NetworkConfig::full());
    MESSAGE("full configuration: " << full.total << " parameters");
    CHECK(full.total >= 8'000'000);
    CHECK(full.total <= 16'000'000);
    std::size_t sum = 0;
    for (const auto& [k, v] : full.breakdown) sum += v;
    CHECK(sum == full.total);
    CHECK(full.breakdown.count("encoder.level1") == 1);
    CHECK(full.breakdown.count("decoder.level3") == 1);
    CHECK(full.breakdown.count("deffe.fwd") == 1);

    CHECK(param_count(NetworkConfig::desk()).total == desk_hand_count());

    NetworkConfig wide = NetworkConfig::desk();
    for (auto& c : wide.encoder_channels) c *= 2;
    for (auto& c : wide.decoder_channels) c *= 2;
    CHECK(param_count(wide).total > param_count(NetworkConfig::desk()).total);
  }

  TEST_CASE("config validation") {
    NetworkConfig bad = NetworkConfig::desk();
    bad.decoder_channels = {8, 16, 32};
    CHECK_THROWS_AS(bad.validate(), ContractViolation);
    bad = NetworkConfig::desk();
    bad.kernel = 2;
    CHECK_THROWS_AS(DlefNet<float>{bad}, ContractViolation);
    bad = NetworkConfig::desk();
    bad.event_channels = 5;
    CHECK_THROWS_AS(bad.validate(), ContractViolation);
  }

  TEST_CASE("full-network adjoint at 3×8×8, n = 4") {
    DlefNet<double> net(NetworkConfig::tiny());
    init(net.params(), InitMode::random, 12);
    const V img = rand_var({3, 8, 8}, 13, 0, 1, true);
    const auto fr = frames(4, 8, 8, 14);
    GradCheckOptions opt = searched(6);
    opt.seed = 15;
    const auto t0 = std::chrono::steady_clock::now();
    const double err = projected_error([&] { return net.forward(img, fr); }, plus(net.params().vars(), {img}), 16, opt);
    MESSAGE("full-network max rel error " << err << " in "
                                         << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
                                         << " s");
    CHECK(err <= 1e-4);
  }
}
