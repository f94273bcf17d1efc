#include <cmath>
#include <random>

#include "doctest.h"
#include "evdeblur/deffe.hpp"
#include "evdeblur/gradcheck.hpp"
#include "oracles.hpp"

using namespace evdeblur;
using V = Var<double>;

namespace {

struct Fixture {
  ParamStore<double> store;
  DeffeParams<double> p;

  explicit Fixture(InitMode mode, int hidden = 2, std::uint64_t seed = 5, LSTMVariant v = LSTMVariant::literal,
                   double scale = 1.0) {
    DeffeConfig cfg;
    cfg.hidden_channels = hidden;
    cfg.variant = v;
    p = DeffeParams<double>::make(store, "deffe", cfg);
    InitOptions init;
    init.mode = mode;
    init.seed = seed;
    init.scale = scale;
    store.initialize(init);
  }
};

std::vector<V> ternary_frames(int n, int H, int W, std::uint64_t seed) {
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

V random_image(int H, int W, std::uint64_t seed, bool param = false) {
  std::mt19937_64 rng(seed);
  Tensor<double> t = oracle::random({3, H, W}, rng, 0, 1);
  return param ? V::parameter(t) : V::constant(t);
}

double sigma(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double projected_grad_error(const std::function<V()>& f, std::vector<V> wrt, std::uint64_t seed) {
  auto w = std::make_shared<Tensor<double>>();
  auto g = [&, w] {
    V y = f();
    if (w->empty()) {
      std::mt19937_64 rng(seed);
      *w = oracle::random(y.shape(), rng);
    }
    return weighted_sum(y, *w);
  };
  GradCheckOptions opt;
  opt.eps = 1e-3;
  opt.step_search = 5;
  const auto rep = grad_check(g, wrt, opt);
  REQUIRE(rep.finite);
  return rep.max_rel_error;
}

}  // namespace

TEST_SUITE("deffe") {
  TEST_CASE("zero parameters reproduce the scalar evaluation of the literal cell") {
    Fixture fx(InitMode::zeros, 16);
    const auto frames = ternary_frames(1, 5, 6, 1);
    const auto s0 = LSTMState<double>::zeros(16, 5, 6);
    const auto out = cell_step_with_image(frames[0], s0, random_image(5, 6, 2), fx.p.forward, LSTMVariant::literal);
    const double C = 0.5 * std::tanh(0.5);
    const double H = 0.5 * std::tanh(C);
    CHECK(C == doctest::Approx(0.231059).epsilon(1e-6));
    for (double g : out.gates.value().storage()) CHECK(g == 0.5);
    for (double c : out.state.cell.value().storage()) CHECK(c == doctest::Approx(C).epsilon(1e-12));
    for (double h : out.state.hidden.value().storage()) CHECK(std::abs(h - 0.113516) <= 1e-6);
    CHECK(out.state.hidden.shape() == Shape{16, 5, 6});
    CHECK(out.weight.value()[0] == 0.5);
  }

  TEST_CASE("gate ranges for random parameters") {
    for (LSTMVariant v : {LSTMVariant::literal, LSTMVariant::standard}) {
      Fixture fx(InitMode::random, 3, 9, v, 3.0);
      auto s = LSTMState<double>::zeros(3, 6, 6);
      const auto frames = ternary_frames(3, 6, 6, 4);
      for (const auto& e : frames) {
        const auto out = cell_step_with_image(e, s, random_image(6, 6, 5), fx.p.forward, v);
        const auto& g = out.gates.value();
        const std::size_t plane = 36;
        for (std::size_t i = 0; i < g.size(); ++i) {
          const bool candidate = i >= 9 * plane;
          if (v == LSTMVariant::standard && candidate) {
            CHECK((g[i] > -1.0 && g[i] < 1.0));
          } else {
            CHECK((g[i] > 0.0 && g[i] < 1.0));
          }
        }
        const double w = out.weight.value()[0];
        CHECK((w > 0.0 && w < 1.0));
        s = out.state;
      }
    }
  }

  TEST_CASE("cell_step rejects mismatched shapes") {
    Fixture fx(InitMode::zeros, 2);
    const auto s = LSTMState<double>::zeros(2, 4, 4);
    const V img = random_image(4, 4, 1);
    CHECK_THROWS_AS(cell_step_with_image(ternary_frames(1, 4, 5, 1)[0], s, img, fx.p.forward, LSTMVariant::literal),
                    ContractViolation);
    CHECK_THROWS_AS(cell_step_with_image(ternary_frames(1, 4, 4, 1)[0], LSTMState<double>::zeros(3, 4, 4), img,
                                         fx.p.forward, LSTMVariant::literal),
                    ContractViolation);
  }

  TEST_CASE("hidden_attention") {
    Fixture zero(InitMode::zeros, 16);
    std::mt19937_64 rng(3);
    const V h = V::constant(oracle::random({16, 4, 4}, rng));
    CHECK(hidden_attention(h, zero.p.forward).value()[0] == 0.5);

    // Constant hidden state: GAP is the constant itself, so the MLP collapses to scalar arithmetic.
    Fixture fx(InitMode::random, 16, 21, LSTMVariant::literal, 2.0);
    const auto& p = fx.p.forward;
    for (double c : {-0.7, 0.0, 0.35, 0.9}) {
      const V hc = V::constant(Tensor<double>({16, 3, 5}, c));
      const auto& W1 = p.attention1.weight.value();
      const auto& b1 = p.attention1.bias.value();
      const auto& W2 = p.attention2.weight.value();
      const auto& b2 = p.attention2.bias.value();
      double z = b2[0];
      for (int j = 0; j < 2; ++j) {
        double a = b1[static_cast<std::size_t>(j)];
        for (int i = 0; i < 16; ++i) a += W1[static_cast<std::size_t>(j) * 16 + i] * c;
        z += W2[static_cast<std::size_t>(j)] * std::max(0.0, a);
      }
      const double w = hidden_attention(hc, p).value()[0];
      CHECK(w == doctest::Approx(sigma(z)).epsilon(1e-12));
      CHECK((w > 0.0 && w < 1.0));
    }
    CHECK_THROWS_AS(hidden_attention(V::constant(Tensor<double>({8, 2, 2})), p), ContractViolation);
  }

  TEST_CASE("run_direction") {
    Fixture fx(InitMode::random, 3, 11);
    const V img = random_image(5, 5, 6);
    const auto frames = ternary_frames(4, 5, 5, 7);
    SUBCASE("single frame is w₁·H₁") {
      const V fe = run_direction<double>({frames[0]}, img, fx.p.forward, LSTMVariant::literal);
      const auto out = cell_step_with_image(frames[0], LSTMState<double>::zeros(3, 5, 5), img, fx.p.forward,
                                            LSTMVariant::literal);
      const double w = out.weight.value()[0];
      const auto& h = out.state.hidden.value();
      for (std::size_t i = 0; i < h.size(); ++i) CHECK(fe.value()[i] == w * h[i]);
    }
    SUBCASE("zero parameters: every step repeats the same scalar") {
      Fixture zero(InitMode::zeros, 16);
      for (int n : {1, 3, 6}) {
        std::vector<V> seq;
        for (int i = 0; i < n; ++i) seq.push_back(frames[static_cast<std::size_t>(i % 4)]);
        const V fe = run_direction(seq, img, zero.p.forward, LSTMVariant::literal);
        CHECK(fe.shape() == Shape{16, 5, 5});
        const double H = 0.5 * std::tanh(0.5 * std::tanh(0.5));
        for (double v : fe.value().storage()) CHECK(v == doctest::Approx(n * 0.5 * H).epsilon(1e-12));
      }
    }
    CHECK_THROWS_AS(run_direction<double>({}, img, fx.p.forward, LSTMVariant::literal), ContractViolation);
  }

  TEST_CASE("bidirectional split") {
    auto s8 = deffe_split(8);
    CHECK(s8.first == std::vector<int>{1, 2, 3, 4});
    CHECK(s8.second == std::vector<int>{8, 7, 6, 5});
    auto s7 = deffe_split(7);
    CHECK(s7.first == std::vector<int>{1, 2, 3, 4});
    CHECK(s7.second == std::vector<int>{7, 6, 5});
    auto s2 = deffe_split(2);
    CHECK(s2.first == std::vector<int>{1});
    CHECK(s2.second == std::vector<int>{2});
    for (int n = 2; n <= 32; ++n) {
      auto [f, b] = deffe_split(n);
      CHECK(f.size() + b.size() == static_cast<std::size_t>(n));
      CHECK(f.size() == static_cast<std::size_t>((n + 1) / 2));
    }
    CHECK_THROWS_AS(deffe_split(1), ContractViolation);
    Fixture fx(InitMode::zeros, 2);
    CHECK_THROWS_AS(deffe_forward(ternary_frames(1, 4, 4, 1), random_image(4, 4, 1), fx.p), ContractViolation);
  }

  TEST_CASE("one parameter set processes any frame count with a 32-channel output") {
    Fixture fx(InitMode::standard, 16, 13);
    const std::size_t before = fx.store.scalar_count();
    const V img = random_image(8, 8, 3);
    for (int n = 7; n <= 13; ++n) {
      const V fe = deffe_forward(ternary_frames(n, 8, 8, static_cast<std::uint64_t>(n)), img, fx.p);
      CHECK(fe.shape() == Shape{32, 8, 8});
      CHECK(all_finite(fe.value()));
    }
    CHECK(fx.store.scalar_count() == before);
  }

  TEST_CASE("features depend on frame order") {
    Fixture fx(InitMode::random, 3, 17);
    const V img = random_image(5, 5, 8);
    auto frames = ternary_frames(6, 5, 5, 9);
    const Tensor<double> a = deffe_forward(frames, img, fx.p).value();
    std::swap(frames[0], frames[2]);
    const Tensor<double> b = deffe_forward(frames, img, fx.p).value();
    CHECK(max_abs_diff(a, b) > 1e-6);
  }

  TEST_CASE("standard mode with no drive stays strictly inside (-1, 1)") {
    Fixture fx(InitMode::random, 4, 19, LSTMVariant::standard, 4.0);
    auto& term = fx.p.forward.image;
    term.weight.mutable_value().fill(0.0);
    term.bias.mutable_value().fill(0.0);
    std::vector<V> zeros(10, V::constant(Tensor<double>({1, 5, 5})));
    auto s = LSTMState<double>::zeros(4, 5, 5);
    const V bterm = image_term(random_image(5, 5, 2), fx.p.forward);
    for (const auto& e : zeros) {
      s = cell_step(e, s, bterm, fx.p.forward, LSTMVariant::standard).state;
      for (double h : s.hidden.value().storage()) CHECK(std::abs(h) < 1.0);
    }
  }

  TEST_CASE("literal mode never reads the input gate") {
    Fixture fx(InitMode::random, 3, 23);
    const V img = random_image(4, 4, 4, true);
    const V fe = deffe_forward(ternary_frames(5, 4, 4, 10), img, fx.p);
    std::mt19937_64 rng(1);
    backward(weighted_sum(fe, oracle::random(fe.shape(), rng)));
    const int ch = 3;
    for (const CellParams<double>* cell : {&fx.p.forward, &fx.p.backward}) {
      for (const DeformTerm<double>* t : {&cell->event, &cell->hidden, &cell->image}) {
        const auto& g = t->weight.grad();
        const std::size_t per_row = g.size() / static_cast<std::size_t>(4 * ch);
        double i_gate = 0, others = 0;
        for (std::size_t k = 0; k < g.size(); ++k) (k < ch * per_row ? i_gate : others) += std::abs(g[k]);
        CHECK(i_gate == 0.0);
        CHECK(others > 0.0);
        if (t->bias) {
          for (int k = 0; k < ch; ++k) CHECK(t->bias.grad()[static_cast<std::size_t>(k)] == 0.0);
        }
      }
    }
  }

  TEST_CASE("adjoints match finite differences") {
    for (LSTMVariant v : {LSTMVariant::literal, LSTMVariant::standard}) {
      CAPTURE(lstm_variant_name(v));
      Fixture fx(InitMode::random, 2, 29, v);
      const V img = random_image(4, 4, 3, true);
      std::mt19937_64 rng(30);
      LSTMState<double> s;
      s.hidden = V::parameter(oracle::random({2, 4, 4}, rng));
      s.cell = V::parameter(oracle::random({2, 4, 4}, rng));
      s.fe_acc = V::constant(Tensor<double>({2, 4, 4}));
      const V e = ternary_frames(1, 4, 4, 31)[0];
      std::vector<V> wrt = fx.store.vars();
      wrt.push_back(img);
      wrt.push_back(s.hidden);
      if (v == LSTMVariant::standard) wrt.push_back(s.cell);
      const double cell_err = projected_grad_error(
          [&] {
            const auto out = cell_step_with_image(e, s, img, fx.p.forward, v);
            return concat_channels<double>({out.state.fe_acc, out.state.cell});
          },
          wrt, 32);
      CHECK(cell_err <= 1e-5);

      const auto frames = ternary_frames(4, 4, 4, 33);
      std::vector<V> wrt_full = fx.store.vars();
      wrt_full.push_back(img);
      CHECK(projected_grad_error([&] { return deffe_forward(frames, img, fx.p); }, wrt_full, 34) <= 1e-4);
    }
  }
}
