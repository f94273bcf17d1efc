#pragma once

#include <cstdint>
#include <vector>

#include "evdeblur/tensor.hpp"

namespace evdeblur {

struct Event {
  std::uint16_t x = 0;  // column
  std::uint16_t y = 0;  // row
  std::int64_t t = 0;   // microseconds since exposure start
  std::int8_t polarity = 1;

  friend bool operator==(const Event&, const Event&) = default;
};

/// Deterministic order for simultaneous events: (t, y, x, polarity).
bool event_before(const Event& a, const Event& b);

struct EventStream {
  int width = 0;
  int height = 0;
  std::int64_t exposure_us = 0;
  std::vector<Event> events;

  /// Throws ContractViolation on out-of-range coordinates, zero polarity,
  /// unsorted or out-of-window timestamps.
  void validate() const;
};

struct EventFrameStack {
  double bin_us = 0.0;
  Tensor<float> frames;  // n×H×W, ternary

  int count() const { return frames.ndim() == 3 ? frames.dim(0) : 0; }
  int height() const { return frames.dim(1); }
  int width() const { return frames.dim(2); }
  /// Frame i (0-based) as a 1×H×W tensor.
  Tensor<float> frame(int i) const;
};

int quantize(double h);

/// n = ceil(T/ΔT), at least 1. Quotients within 1e-9 (relative) of an integer
/// are treated as exact so ΔT = T/M yields n = M despite rounding.
int frame_count(double exposure_us, double bin_us);

/// Bin (1-based) holding timestamp t: ((i−1)ΔT, iΔT]. t = 0 belongs to bin 1.
int bin_index(std::int64_t t, double bin_us, int n);

/// Signed polarity sums per bin and pixel, before quantization (n×H×W).
Tensor<int> bin_sums(const EventStream& s, double bin_us);

EventFrameStack accumulate(const EventStream& s, double bin_us);

struct SimConfig {
  double threshold = 0.2;  // contrast threshold in log-intensity units
  double floor = 1e-3;     // added to intensities before the log

  void validate() const;
};

/// Contrast-threshold event generation from a sequence of 1×H×W intensity maps
/// with strictly increasing timestamps. Times are rebased to the first frame.
EventStream simulate_events(const std::vector<Tensor<double>>& frames, const std::vector<std::int64_t>& t_us,
                            const SimConfig& cfg);

struct StreamStats {
  std::size_t count = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  double bin_us = 0.0;
  std::vector<std::size_t> per_bin;
};

StreamStats stream_stats(const EventStream& s, double bin_us);

}  // namespace evdeblur
