#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "evdeblur/events.hpp"

using namespace evdeblur;

namespace {

Event ev(int x, int y, std::int64_t t, int p) {
  Event e;
  e.x = static_cast<std::uint16_t>(x);
  e.y = static_cast<std::uint16_t>(y);
  e.t = t;
  e.polarity = static_cast<std::int8_t>(p);
  return e;
}

EventStream random_stream(std::mt19937_64& rng, int W, int H, std::int64_t T, std::size_t count) {
  EventStream s;
  s.width = W;
  s.height = H;
  s.exposure_us = T;
  std::uniform_int_distribution<int> ux(0, W - 1), uy(0, H - 1), up(0, 1);
  std::uniform_int_distribution<std::int64_t> ut(0, T);
  for (std::size_t i = 0; i < count; ++i) s.events.push_back(ev(ux(rng), uy(rng), ut(rng), up(rng) ? 1 : -1));
  std::sort(s.events.begin(), s.events.end(), event_before);
  return s;
}

// One pixel, a monotone sequence of intensities at 1 ms spacing.
EventStream simulate_pixel(const std::vector<double>& values, double thr) {
  std::vector<Tensor<double>> frames;
  std::vector<std::int64_t> ts;
  for (std::size_t i = 0; i < values.size(); ++i) {
    frames.emplace_back(Shape{1, 1, 1}, values[i]);
    ts.push_back(static_cast<std::int64_t>(i) * 1000);
  }
  SimConfig cfg;
  cfg.threshold = thr;
  return simulate_events(frames, ts, cfg);
}

int signed_count(const EventStream& s) {
  int n = 0;
  for (const Event& e : s.events) n += e.polarity;
  return n;
}

}  // namespace

TEST_SUITE("event-pipeline") {
  TEST_CASE("quantize is the strict sign") {
    CHECK(quantize(3) == 1);
    CHECK(quantize(0) == 0);
    CHECK(quantize(-2) == -1);
    CHECK(quantize(1e-12) == 1);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0, 5);
    for (int i = 0; i < 200; ++i) {
      const double h = n(rng);
      CHECK(quantize(-h) == -quantize(h));
    }
  }

  TEST_CASE("accumulate: empty stream gives n all-zero frames") {
    EventStream s;
    s.width = 3;
    s.height = 2;
    s.exposure_us = 5000;
    const auto st = accumulate(s, 1000);
    CHECK(st.count() == 5);
    for (float v : st.frames.storage()) CHECK(v == 0.0f);
  }

  TEST_CASE("accumulate: hand example") {
    EventStream s;
    s.width = 3;
    s.height = 3;
    s.exposure_us = 2000;
    s.events = {ev(1, 1, 500, 1), ev(1, 1, 700, 1), ev(1, 1, 1300, -1)};
    const auto st = accumulate(s, 1000);
    REQUIRE(st.count() == 2);
    for (int f = 0; f < 2; ++f) {
      for (int y = 0; y < 3; ++y) {
        for (int x = 0; x < 3; ++x) {
          const float want = (x == 1 && y == 1) ? (f == 0 ? 1.0f : -1.0f) : 0.0f;
          CHECK(st.frames.at(f, y, x) == want);
        }
      }
    }
    CHECK(bin_sums(s, 1000).at(0, 1, 1) == 2);
  }

  TEST_CASE("frame counts") {
    CHECK(frame_count(13000, 1000) == 13);
    CHECK(frame_count(6000, 6000.0 / 7.0) == 7);
    for (int M = 7; M <= 13; ++M) {
      const double T = (M - 1) * 1000.0;
      CHECK(frame_count(T, T / M) == M);
    }
    CHECK(frame_count(5500, 1000) == 6);  // partial final bin kept
    CHECK(frame_count(0, 1000) == 1);
    EventStream s;
    s.width = s.height = 1;
    s.exposure_us = 1000;
    CHECK_THROWS_AS(accumulate(s, 0.0), ContractViolation);
    CHECK_THROWS_AS(accumulate(s, -1.0), ContractViolation);
  }

  TEST_CASE("bin boundaries are half-open on the left") {
    CHECK(bin_index(0, 1000, 3) == 1);
    CHECK(bin_index(1000, 1000, 3) == 1);
    CHECK(bin_index(1001, 1000, 3) == 2);
    CHECK(bin_index(3000, 1000, 3) == 3);
  }

  TEST_CASE("property: accumulate matches a per-event oracle") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 200; ++trial) {
      const int W = std::uniform_int_distribution<int>(1, 6)(rng);
      const int H = std::uniform_int_distribution<int>(1, 6)(rng);
      const std::int64_t T = std::uniform_int_distribution<std::int64_t>(1, 20000)(rng);
      const std::int64_t dt = std::uniform_int_distribution<std::int64_t>(1, 5000)(rng);
      const auto s = random_stream(rng, W, H, T, std::uniform_int_distribution<std::size_t>(0, 80)(rng));
      const int n = static_cast<int>((T + dt - 1) / dt);
      std::vector<int> sums(static_cast<std::size_t>(n) * H * W, 0);
      for (const Event& e : s.events) {
        const std::int64_t b = e.t == 0 ? 0 : (e.t + dt - 1) / dt - 1;
        sums[(static_cast<std::size_t>(b) * H + e.y) * W + e.x] += e.polarity;
      }
      const auto st = accumulate(s, static_cast<double>(dt));
      REQUIRE(st.count() == n);
      for (std::size_t i = 0; i < sums.size(); ++i) {
        const float v = st.frames[i];
        CHECK((v == -1.0f || v == 0.0f || v == 1.0f));
        CHECK(v == static_cast<float>((sums[i] > 0) - (sums[i] < 0)));
      }
    }
  }

  TEST_CASE("property: bin sums are additive over stream partitions") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      const auto s = random_stream(rng, 5, 4, 9000, 120);
      EventStream a = s, b = s;
      a.events.clear();
      b.events.clear();
      for (const Event& e : s.events) (std::bernoulli_distribution(0.4)(rng) ? a : b).events.push_back(e);
      const auto whole = bin_sums(s, 1300);
      const auto pa = bin_sums(a, 1300);
      const auto pb = bin_sums(b, 1300);
      for (std::size_t i = 0; i < whole.size(); ++i) CHECK(whole[i] == pa[i] + pb[i]);
    }
  }

  TEST_CASE("simulate_events: steps against the threshold") {
    CHECK(simulate_pixel({0.5, 0.5, 0.5, 0.5}, 0.2).events.empty());
    const auto one = simulate_pixel({100, 200}, 0.6);
    REQUIRE(one.events.size() == 1);
    CHECK(one.events[0].polarity == 1);
    const auto two = simulate_pixel({100, 400}, 0.6);
    REQUIRE(two.events.size() == 2);
    CHECK(signed_count(two) == 2);
    CHECK(signed_count(simulate_pixel({400, 100}, 0.6)) == -2);
    // Crossing times are interpolated in log space: ln(1.0/0.5) crosses 0.6 at 0.6/ln2 of the interval.
    const auto t = simulate_pixel({0.5, 1.0}, 0.6);
    REQUIRE(t.events.size() == 1);
    const double lo = std::log(0.5 + 1e-3), hi = std::log(1.0 + 1e-3);
    CHECK(t.events[0].t == std::llround(0.6 / (hi - lo) * 1000.0));
  }

  TEST_CASE("simulate_events rejects bad inputs") {
    std::vector<Tensor<double>> f{Tensor<double>({1, 1, 1}, 0.5), Tensor<double>({1, 1, 1}, -0.1)};
    CHECK_THROWS_AS(simulate_events(f, {0, 1000}, SimConfig{}), ContractViolation);
    f[1][0] = 0.2;
    CHECK_THROWS_AS(simulate_events(f, {0, 0}, SimConfig{}), ContractViolation);
    CHECK_THROWS_AS(simulate_events({f[0]}, {0}, SimConfig{}), ContractViolation);
    SimConfig bad;
    bad.threshold = 0;
    CHECK_THROWS_AS(simulate_events(f, {0, 1000}, bad), ContractViolation);
  }

  TEST_CASE("property: monotone ramps emit |Δlog I|/thr events within one threshold") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 300; ++trial) {
      const double thr = std::uniform_real_distribution<double>(0.05, 0.6)(rng);
      const int len = std::uniform_int_distribution<int>(2, 30)(rng);
      std::vector<double> v{std::uniform_real_distribution<double>(0.0, 1.0)(rng)};
      const bool up = std::bernoulli_distribution(0.5)(rng);
      for (int i = 1; i < len; ++i) {
        const double step = std::uniform_real_distribution<double>(0.0, 0.2)(rng);
        v.push_back(up ? v.back() + step : std::max(0.0, v.back() - step));
      }
      const double change = std::log((v.back() + 1e-3) / (v.front() + 1e-3));
      const auto s = simulate_pixel(v, thr);
      CHECK(std::abs(signed_count(s) * thr - change) <= thr + 1e-12);
      for (const Event& e : s.events) CHECK(e.polarity == (up ? 1 : -1));
    }
  }

  TEST_CASE("simulated streams are sorted and inside the exposure window") {
    std::mt19937_64 rng(5);
    std::vector<Tensor<double>> frames;
    std::vector<std::int64_t> ts;
    std::int64_t t = 0;
    for (int k = 0; k < 9; ++k) {
      Tensor<double> f({1, 7, 6});
      for (auto& x : f.storage()) x = std::uniform_real_distribution<double>(0, 1)(rng);
      frames.push_back(f);
      ts.push_back(t);
      t += std::uniform_int_distribution<std::int64_t>(1, 3000)(rng);
    }
    SimConfig cfg;
    cfg.threshold = 0.15;
    const auto s = simulate_events(frames, ts, cfg);
    CHECK(!s.events.empty());
    CHECK(s.exposure_us == ts.back());
    CHECK_NOTHROW(s.validate());
    CHECK(std::is_sorted(s.events.begin(), s.events.end(), event_before));
    // Per-row parallelism must not change the result.
    CHECK(simulate_events(frames, ts, cfg).events == s.events);
  }

  TEST_CASE("stream_stats") {
    EventStream empty;
    empty.width = empty.height = 2;
    empty.exposure_us = 3000;
    const auto z = stream_stats(empty, 1000);
    CHECK(z.count == 0);
    CHECK(z.positive == 0);
    CHECK(z.negative == 0);
    CHECK(z.per_bin == std::vector<std::size_t>{0, 0, 0});

    EventStream s;
    s.width = s.height = 3;
    s.exposure_us = 2000;
    s.events = {ev(1, 1, 500, 1), ev(1, 1, 700, 1), ev(1, 1, 1300, -1)};
    const auto st = stream_stats(s, 1000);
    CHECK(st.count == 3);
    CHECK(st.positive == 2);
    CHECK(st.negative == 1);
    CHECK(st.per_bin == std::vector<std::size_t>{2, 1});

    std::mt19937_64 rng(6);
    const auto r = random_stream(rng, 4, 4, 10000, 333);
    const auto rs = stream_stats(r, 700);
    std::size_t total = 0;
    for (auto c : rs.per_bin) total += c;
    CHECK(total == rs.count);
    CHECK(rs.positive + rs.negative == rs.count);
  }

  TEST_CASE("stream validation") {
    EventStream s;
    s.width = 2;
    s.height = 2;
    s.exposure_us = 100;
    s.events = {ev(2, 0, 10, 1)};
    CHECK_THROWS_AS(s.validate(), ContractViolation);
    s.events = {ev(0, 0, 10, 0)};
    CHECK_THROWS_AS(s.validate(), ContractViolation);
    s.events = {ev(0, 0, 50, 1), ev(0, 0, 10, 1)};
    CHECK_THROWS_AS(s.validate(), ContractViolation);
    s.events = {ev(0, 0, 101, 1)};
    CHECK_THROWS_AS(s.validate(), ContractViolation);
  }
}
