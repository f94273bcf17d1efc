#include "evdeblur/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <system_error>

namespace evdeblur {

namespace fs = std::filesystem;

Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::random_device rd;
  const fs::path tmp = path.string() + ".tmp" + std::to_string(rd());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw std::runtime_error("cannot rename onto '" + path.string() + "': " + ec.message());
  }
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

namespace {

class Writer {
 public:
  void bytes(const char* s, std::size_t n) { out_.insert(out_.end(), s, s + n); }
  template <typename U>
  void le(U v) {
    using Raw = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                   std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                                      std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>>;
    const Raw r = std::bit_cast<Raw>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(r >> (8 * i)));
  }
  Bytes take() { return std::move(out_); }
  void reserve(std::size_t n) { out_.reserve(n); }

 private:
  Bytes out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> b, std::string what) : b_(b), what_(std::move(what)) {}
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return b_.size() - pos_; }
  void need(std::size_t n, const std::string& field) const {
    if (remaining() < n) throw ParseError(what_ + ": truncated while reading " + field, pos_);
  }
  void magic(const char* m) {
    need(4, "magic");
    if (std::memcmp(b_.data() + pos_, m, 4) != 0) throw ParseError(what_ + ": bad magic, expected " + m, pos_);
    pos_ += 4;
  }
  template <typename U>
  U le(const std::string& field) {
    using Raw = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                                   std::conditional_t<sizeof(U) == 4, std::uint32_t,
                                                      std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>>;
    need(sizeof(U), field);
    Raw r = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) r |= static_cast<Raw>(static_cast<Raw>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return std::bit_cast<U>(r);
  }
  [[noreturn]] void fail(const std::string& msg, std::size_t at) const { throw ParseError(what_ + ": " + msg, at); }

 private:
  std::span<const std::uint8_t> b_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace

// TEN1 -----------------------------------------------------------------------

template <typename T>
Bytes encode_ten1(const Tensor<T>& t) {
  require(t.ndim() <= 255, "encode_ten1: too many dims");
  Writer w;
  w.reserve(6 + 4 * t.shape().size() + sizeof(T) * t.size());
  w.bytes("TEN1", 4);
  w.le<std::uint8_t>(std::is_same_v<T, float> ? 0 : 1);
  w.le<std::uint8_t>(static_cast<std::uint8_t>(t.ndim()));
  for (int d : t.shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
  for (T v : t.storage()) w.le<T>(v);
  return w.take();
}

DType ten1_dtype(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "TEN1");
  r.magic("TEN1");
  const std::size_t at = r.pos();
  const auto code = r.le<std::uint8_t>("dtype");
  if (code > 1) r.fail("unknown dtype code " + std::to_string(code), at);
  return static_cast<DType>(code);
}

template <typename T>
Tensor<T> decode_ten1(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "TEN1");
  r.magic("TEN1");
  const std::size_t dtype_at = r.pos();
  const auto code = r.le<std::uint8_t>("dtype");
  if (code > 1) r.fail("unknown dtype code " + std::to_string(code), dtype_at);
  const auto ndim = r.le<std::uint8_t>("ndim");
  Shape shape;
  std::size_t count = 1;
  for (int i = 0; i < ndim; ++i) {
    const std::size_t at = r.pos();
    const auto d = r.le<std::uint32_t>("dim " + std::to_string(i));
    if (d > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) r.fail("dim too large", at);
    shape.push_back(static_cast<int>(d));
    count *= d;
  }
  const std::size_t width = code == 0 ? 4 : 8;
  if (count > r.remaining() / width) r.need(count * width, "payload");
  std::vector<T> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    data[i] = code == 0 ? static_cast<T>(r.le<float>("payload")) : static_cast<T>(r.le<double>("payload"));
  }
  if (r.remaining() != 0) r.fail("trailing bytes after payload", r.pos());
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
void write_tensor(const fs::path& path, const Tensor<T>& t) {
  write_file_atomic(path, encode_ten1(t));
}

template <typename T>
Tensor<T> read_tensor(const fs::path& path) {
  return decode_ten1<T>(read_file(path));
}

template Bytes encode_ten1<float>(const Tensor<float>&);
template Bytes encode_ten1<double>(const Tensor<double>&);
template Tensor<float> decode_ten1<float>(std::span<const std::uint8_t>);
template Tensor<double> decode_ten1<double>(std::span<const std::uint8_t>);
template void write_tensor<float>(const fs::path&, const Tensor<float>&);
template void write_tensor<double>(const fs::path&, const Tensor<double>&);
template Tensor<float> read_tensor<float>(const fs::path&);
template Tensor<double> read_tensor<double>(const fs::path&);

// EVT1 -----------------------------------------------------------------------

Bytes encode_evt1(const EventStream& s) {
  s.validate();
  require(s.width <= 65535 && s.height <= 65535, "encode_evt1: sensor dims exceed 16 bits");
  Writer w;
  w.reserve(24 + 13 * s.events.size());
  w.bytes("EVT1", 4);
  w.le<std::uint16_t>(static_cast<std::uint16_t>(s.width));
  w.le<std::uint16_t>(static_cast<std::uint16_t>(s.height));
  w.le<std::uint64_t>(static_cast<std::uint64_t>(s.exposure_us));
  w.le<std::uint64_t>(s.events.size());
  for (const Event& e : s.events) {
    w.le<std::uint16_t>(e.x);
    w.le<std::uint16_t>(e.y);
    w.le<std::uint64_t>(static_cast<std::uint64_t>(e.t));
    w.le<std::int8_t>(e.polarity);
  }
  return w.take();
}

EventStream decode_evt1(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, "EVT1");
  r.magic("EVT1");
  EventStream s;
  s.width = r.le<std::uint16_t>("width");
  s.height = r.le<std::uint16_t>("height");
  const std::size_t exp_at = r.pos();
  const auto exposure = r.le<std::uint64_t>("exposure");
  if (exposure > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
    r.fail("exposure out of range", exp_at);
  }
  s.exposure_us = static_cast<std::int64_t>(exposure);
  if (s.width == 0 || s.height == 0) r.fail("zero sensor dims", 4);
  const auto count = r.le<std::uint64_t>("event count");
  if (count > r.remaining() / 13) {
    // Points at the first record that does not fit, without trusting count for allocation.
    const std::size_t whole = r.remaining() / 13;
    r.fail("truncated: header declares " + std::to_string(count) + " events, record " + std::to_string(whole) +
               " is incomplete",
           r.pos() + whole * 13);
  }
  s.events.reserve(static_cast<std::size_t>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t at = r.pos();
    Event e;
    e.x = r.le<std::uint16_t>("event x");
    e.y = r.le<std::uint16_t>("event y");
    const auto t = r.le<std::uint64_t>("event t");
    e.polarity = r.le<std::int8_t>("event polarity");
    if (e.x >= s.width || e.y >= s.height) r.fail("event " + std::to_string(i) + " outside sensor", at);
    if (e.polarity != 1 && e.polarity != -1) r.fail("event " + std::to_string(i) + " has polarity " +
                                                    std::to_string(e.polarity), at);
    if (t > exposure) r.fail("event " + std::to_string(i) + " timestamp beyond exposure", at);
    e.t = static_cast<std::int64_t>(t);
    if (!s.events.empty() && s.events.back().t > e.t) r.fail("event " + std::to_string(i) + " out of order", at);
    s.events.push_back(e);
  }
  if (r.remaining() != 0) r.fail("trailing bytes after event records", r.pos());
  return s;
}

void write_events(const fs::path& path, const EventStream& s) { write_file_atomic(path, encode_evt1(s)); }
EventStream read_events(const fs::path& path) { return decode_evt1(read_file(path)); }

EventStream parse_events_csv(const std::string& text, int width, int height, std::int64_t exposure_us) {
  require(width >= 1 && width <= 65535 && height >= 1 && height <= 65535, "parse_events_csv: invalid sensor dims");
  EventStream s;
  s.width = width;
  s.height = height;
  s.exposure_us = exposure_us;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::size_t at = pos;
    pos = end + 1;
    if (header) {
      if (line != "x,y,t,p") throw ParseError("CSV: expected header 'x,y,t,p'", at);
      header = false;
      continue;
    }
    if (line.empty()) continue;
    long long v[4];
    std::size_t p = 0;
    for (int f = 0; f < 4; ++f) {
      const std::size_t comma = f < 3 ? line.find(',', p) : line.size();
      if (comma == std::string::npos) throw ParseError("CSV: expected 4 fields", at);
      const std::string field = line.substr(p, comma - p);
      std::size_t used = 0;
      try {
        v[f] = std::stoll(field, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (field.empty() || used != field.size()) throw ParseError("CSV: malformed field '" + field + "'", at + p);
      p = comma + 1;
    }
    if (v[0] < 0 || v[0] >= width || v[1] < 0 || v[1] >= height) throw ParseError("CSV: event outside sensor", at);
    if (v[3] != 1 && v[3] != -1) throw ParseError("CSV: polarity must be -1 or 1", at);
    if (v[2] < 0 || v[2] > exposure_us) throw ParseError("CSV: timestamp outside [0, T]", at);
    s.events.push_back(Event{static_cast<std::uint16_t>(v[0]), static_cast<std::uint16_t>(v[1]), v[2],
                             static_cast<std::int8_t>(v[3])});
  }
  if (header) throw ParseError("CSV: missing header", 0);
  std::stable_sort(s.events.begin(), s.events.end(), event_before);
  return s;
}

std::string format_events_csv(const EventStream& s) {
  std::ostringstream out;
  out << "x,y,t,p\n";
  for (const Event& e : s.events) out << e.x << ',' << e.y << ',' << e.t << ',' << int(e.polarity) << '\n';
  return out.str();
}

// PNM ------------------------------------------------------------------------

Bytes encode_pnm(const Image8& img) {
  require(img.channels == 1 || img.channels == 3, "encode_pnm: channels must be 1 or 3");
  require(img.width >= 1 && img.height >= 1, "encode_pnm: dims must be >= 1");
  require(img.pixels.size() == static_cast<std::size_t>(img.width) * img.height * img.channels,
          "encode_pnm: pixel buffer size mismatch");
  const std::string header = std::string(img.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(img.width) + " " +
                             std::to_string(img.height) + "\n255\n";
  Bytes out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

Image8 decode_pnm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto fail = [](const std::string& m, std::size_t at) -> void { throw ParseError("PNM: " + m, at); };
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5')) fail("expected P6 or P5 magic", 0);
  Image8 img;
  img.channels = bytes[1] == '6' ? 3 : 1;
  pos = 2;
  auto skip_space = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    const std::size_t at = pos;
    long long v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > 1'000'000) fail(std::string(what) + " too large", at);
      ++pos;
    }
    if (pos == at) fail(std::string("expected ") + what, at);
    return static_cast<int>(v);
  };
  img.width = number("width");
  img.height = number("height");
  const std::size_t maxval_at = pos;
  const int maxval = number("maxval");
  if (maxval != 255) fail("maxval " + std::to_string(maxval) + " unsupported (only 255)", maxval_at);
  if (img.width < 1 || img.height < 1) fail("zero dims", maxval_at);
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) fail("expected whitespace after maxval", pos);
  ++pos;
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
  if (bytes.size() - pos < n) fail("truncated pixel data", bytes.size());
  if (bytes.size() - pos > n) fail("trailing bytes after pixel data", pos + n);
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

void write_image(const fs::path& path, const Image8& img) { write_file_atomic(path, encode_pnm(img)); }
Image8 read_image(const fs::path& path) { return decode_pnm(read_file(path)); }

Image8 image_from_tensor(const Tensor<float>& t) {
  require_chw(t, "image_from_tensor input");
  require(t.channels() == 1 || t.channels() == 3, "image_from_tensor: need 1 or 3 channels");
  Image8 img;
  img.channels = t.channels();
  img.height = t.height();
  img.width = t.width();
  img.pixels.resize(t.size());
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const float v = std::clamp(t.at(c, y, x), 0.0f, 1.0f);
        img.pixels[(static_cast<std::size_t>(y) * img.width + x) * img.channels + c] =
            static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  return img;
}

Tensor<float> tensor_from_image(const Image8& img) {
  Tensor<float> t({img.channels, img.height, img.width});
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        t.at(c, y, x) = img.pixels[(static_cast<std::size_t>(y) * img.width + x) * img.channels + c] / 255.0f;
      }
    }
  }
  return t;
}

}  // namespace evdeblur
