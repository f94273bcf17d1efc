#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "evdeblur/events.hpp"
#include "evdeblur/tensor.hpp"

namespace evdeblur {

using Bytes = std::vector<std::uint8_t>;

Bytes read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

// TEN1 tensors ---------------------------------------------------------------

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
Bytes encode_ten1(const Tensor<T>& t);
/// Decodes either dtype and converts to T.
template <typename T>
Tensor<T> decode_ten1(std::span<const std::uint8_t> bytes);
DType ten1_dtype(std::span<const std::uint8_t> bytes);

template <typename T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& t);
template <typename T>
Tensor<T> read_tensor(const std::filesystem::path& path);

// Events ---------------------------------------------------------------------

Bytes encode_evt1(const EventStream& s);
EventStream decode_evt1(std::span<const std::uint8_t> bytes);
void write_events(const std::filesystem::path& path, const EventStream& s);
EventStream read_events(const std::filesystem::path& path);

/// Parses `x,y,t,p` rows (t in µs, p ∈ {−1, 1}); events are sorted on ingestion.
EventStream parse_events_csv(const std::string& text, int width, int height, std::int64_t exposure_us);
std::string format_events_csv(const EventStream& s);

// 8-bit PPM (P6) / PGM (P5) ----------------------------------------------------

struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 3 for P6, 1 for P5
  std::vector<std::uint8_t> pixels;  // interleaved, row-major

  friend bool operator==(const Image8&, const Image8&) = default;
};

Bytes encode_pnm(const Image8& img);
Image8 decode_pnm(std::span<const std::uint8_t> bytes);
void write_image(const std::filesystem::path& path, const Image8& img);
Image8 read_image(const std::filesystem::path& path);

/// C×H×W values in [0, 1] (clamped) to 8-bit, rounding to nearest.
Image8 image_from_tensor(const Tensor<float>& t);
/// 8-bit image to C×H×W with v/255.
Tensor<float> tensor_from_image(const Image8& img);

}  // namespace evdeblur
