#include "evdeblur/events.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace evdeblur {

namespace {

// ceil(q) with near-integer snapping.
long long snapped_ceil(double q) {
  const double r = std::round(q);
  if (std::abs(q - r) < 1e-9 * std::max(1.0, std::abs(q))) return static_cast<long long>(r);
  return static_cast<long long>(std::ceil(q));
}

void require_bin(double bin_us) {
  require(std::isfinite(bin_us) && bin_us > 0.0, "accumulate: bin width ΔT must be > 0, got " + std::to_string(bin_us));
}

}  // namespace

bool event_before(const Event& a, const Event& b) {
  if (a.t != b.t) return a.t < b.t;
  if (a.y != b.y) return a.y < b.y;
  if (a.x != b.x) return a.x < b.x;
  return a.polarity < b.polarity;
}

void EventStream::validate() const {
  require(width >= 1 && height >= 1, "EventStream: sensor dims must be >= 1");
  require(exposure_us >= 0, "EventStream: exposure must be >= 0");
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    const std::string at = " (event " + std::to_string(i) + ")";
    require(e.x < width && e.y < height, "EventStream: coordinate outside sensor" + at);
    require(e.polarity == 1 || e.polarity == -1, "EventStream: polarity must be ±1" + at);
    require(e.t >= 0 && e.t <= exposure_us, "EventStream: timestamp outside [0, T]" + at);
    if (i > 0) require(events[i - 1].t <= e.t, "EventStream: timestamps not sorted" + at);
  }
}

Tensor<float> EventFrameStack::frame(int i) const {
  require(i >= 0 && i < count(), "EventFrameStack: frame index " + std::to_string(i) + " out of range");
  const std::size_t plane = static_cast<std::size_t>(height()) * width();
  std::vector<float> v(frames.data() + i * plane, frames.data() + (i + 1) * plane);
  return Tensor<float>({1, height(), width()}, std::move(v));
}

int quantize(double h) { return (h > 0) - (h < 0); }

int frame_count(double exposure_us, double bin_us) {
  require_bin(bin_us);
  require(exposure_us >= 0.0, "frame_count: exposure must be >= 0");
  return static_cast<int>(std::max(1LL, snapped_ceil(exposure_us / bin_us)));
}

int bin_index(std::int64_t t, double bin_us, int n) {
  if (t <= 0) return 1;
  const long long i = snapped_ceil(static_cast<double>(t) / bin_us);
  return static_cast<int>(std::clamp<long long>(i, 1, n));
}

Tensor<int> bin_sums(const EventStream& s, double bin_us) {
  require_bin(bin_us);
  s.validate();
  const int n = frame_count(static_cast<double>(s.exposure_us), bin_us);
  Tensor<int> sums({n, s.height, s.width});
  for (const Event& e : s.events) {
    const int b = bin_index(e.t, bin_us, n) - 1;
    sums.at(b, e.y, e.x) += e.polarity;
  }
  return sums;
}

EventFrameStack accumulate(const EventStream& s, double bin_us) {
  const Tensor<int> sums = bin_sums(s, bin_us);
  EventFrameStack out;
  out.bin_us = bin_us;
  out.frames = Tensor<float>(sums.shape());
  for (std::size_t i = 0; i < sums.size(); ++i) out.frames[i] = static_cast<float>(quantize(sums[i]));
  return out;
}

void SimConfig::validate() const {
  require(threshold > 0.0, "SimConfig: threshold must be > 0");
  require(floor > 0.0, "SimConfig: intensity floor must be > 0");
}

EventStream simulate_events(const std::vector<Tensor<double>>& frames, const std::vector<std::int64_t>& t_us,
                            const SimConfig& cfg) {
  cfg.validate();
  require(frames.size() >= 2, "simulate_events: need at least 2 frames");
  require(t_us.size() == frames.size(), "simulate_events: one timestamp per frame required");
  const Shape& shape = frames[0].shape();
  require(shape.size() == 3 && shape[0] == 1, "simulate_events: frames must be 1×H×W, got " + shape_str(shape));
  for (std::size_t k = 0; k < frames.size(); ++k) {
    require(frames[k].shape() == shape, "simulate_events: frame " + std::to_string(k) + " shape mismatch");
    require_finite(frames[k], "simulate_events frame");
    for (double v : frames[k].storage()) {
      require(v >= 0.0, "simulate_events: negative intensity in frame " + std::to_string(k));
    }
    if (k > 0) require(t_us[k] > t_us[k - 1], "simulate_events: timestamps must be strictly increasing");
  }
  const int H = shape[1];
  const int W = shape[2];
  require(H <= 65535 && W <= 65535, "simulate_events: sensor dims exceed 16-bit coordinates");

  EventStream s;
  s.width = W;
  s.height = H;
  s.exposure_us = t_us.back() - t_us.front();

  std::vector<std::vector<Event>> rows(static_cast<std::size_t>(H));
#pragma omp parallel for schedule(static)
  for (int y = 0; y < H; ++y) {
    auto& out = rows[static_cast<std::size_t>(y)];
    for (int x = 0; x < W; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * W + x;
      double ref = std::log(frames[0][idx] + cfg.floor);
      for (std::size_t k = 0; k + 1 < frames.size(); ++k) {
        const double l0 = std::log(frames[k][idx] + cfg.floor);
        const double l1 = std::log(frames[k + 1][idx] + cfg.floor);
        const double g = l1 - ref;
        const long long count = static_cast<long long>(std::floor(std::abs(g) / cfg.threshold));
        if (count == 0) continue;
        const int sign = g > 0 ? 1 : -1;
        const double span = static_cast<double>(t_us[k + 1] - t_us[k]);
        for (long long j = 1; j <= count; ++j) {
          const double level = ref + sign * static_cast<double>(j) * cfg.threshold;
          // A level already passed at l0 (floor() rounding can leave a residual of exactly thr)
          // fires at the start of the interval; this also covers l1 == l0.
          const double dl = l1 - l0;
          const double tau = dl != 0.0 ? std::clamp((level - l0) / dl, 0.0, 1.0) : 0.0;
          Event e;
          e.x = static_cast<std::uint16_t>(x);
          e.y = static_cast<std::uint16_t>(y);
          e.t = t_us[k] - t_us[0] + std::llround(tau * span);
          e.polarity = static_cast<std::int8_t>(sign);
          out.push_back(e);
        }
        ref += sign * static_cast<double>(count) * cfg.threshold;
      }
    }
  }
  std::size_t total = 0;
  for (const auto& r : rows) total += r.size();
  s.events.reserve(total);
  for (const auto& r : rows) s.events.insert(s.events.end(), r.begin(), r.end());
  std::sort(s.events.begin(), s.events.end(), event_before);
  return s;
}

StreamStats stream_stats(const EventStream& s, double bin_us) {
  require_bin(bin_us);
  StreamStats st;
  st.bin_us = bin_us;
  const int n = frame_count(static_cast<double>(s.exposure_us), bin_us);
  st.per_bin.assign(static_cast<std::size_t>(n), 0);
  for (const Event& e : s.events) {
    ++st.count;
    if (e.polarity > 0) {
      ++st.positive;
    } else {
      ++st.negative;
    }
    ++st.per_bin[static_cast<std::size_t>(bin_index(e.t, bin_us, n) - 1)];
  }
  return st;
}

}  // namespace evdeblur
