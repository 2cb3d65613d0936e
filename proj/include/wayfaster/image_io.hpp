#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace wayfaster {

/// Row-major single-channel raster.
template <typename T>
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

  T& at(int u, int v) { return data[static_cast<size_t>(v) * width + u]; }
  const T& at(int u, int v) const { return data[static_cast<size_t>(v) * width + u]; }
  bool operator==(const Raster&) const = default;
};

void write_pgm8(const std::filesystem::path& path, const Raster<std::uint8_t>& img);
void write_pgm16(const std::filesystem::path& path, const Raster<std::uint16_t>& img);
Raster<std::uint8_t> read_pgm8(const std::filesystem::path& path);
Raster<std::uint16_t> read_pgm16(const std::filesystem::path& path);

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

/// Minimal truecolor PNG encoder (zlib-compressed, no filtering).
void write_png(const std::filesystem::path& path, const Raster<Rgb>& img);

}  // namespace wayfaster
