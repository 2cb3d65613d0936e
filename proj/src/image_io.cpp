#include "wayfaster/image_io.hpp"

#include <fstream>
#include <stdexcept>
#include <string>

#include <zlib.h>

namespace wayfaster {
namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  return out;
}

struct PgmHeader {
  int width = 0, height = 0, maxval = 0;
};

PgmHeader read_header(std::istream& in, const std::filesystem::path& path) {
  std::string magic;
  in >> magic;
  if (magic != "P5") throw std::runtime_error("not a binary PGM: " + path.string());
  PgmHeader h;
  auto next_int = [&]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      in >> std::ws;
    }
    int value = 0;
    in >> value;
    return value;
  };
  h.width = next_int();
  h.height = next_int();
  h.maxval = next_int();
  in.get();
  if (!in || h.width <= 0 || h.height <= 0) throw std::runtime_error("malformed PGM header: " + path.string());
  return h;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(std::vector<std::uint8_t>& out, const char* type, const std::vector<std::uint8_t>& payload) {
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  const size_t type_at = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  uLong crc = crc32(0L, out.data() + type_at, static_cast<uInt>(4 + payload.size()));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

}  // namespace

void write_pgm8(const std::filesystem::path& path, const Raster<std::uint8_t>& img) {
  auto out = open_out(path);
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
}

void write_pgm16(const std::filesystem::path& path, const Raster<std::uint16_t>& img) {
  auto out = open_out(path);
  out << "P5\n" << img.width << " " << img.height << "\n65535\n";
  // PGM stores 16-bit samples most significant byte first
  for (std::uint16_t v : img.data) {
    const char bytes[2] = {static_cast<char>(v >> 8), static_cast<char>(v & 0xff)};
    out.write(bytes, 2);
  }
}

Raster<std::uint8_t> read_pgm8(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  const auto h = read_header(in, path);
  if (h.maxval > 255) throw std::runtime_error("expected 8-bit PGM: " + path.string());
  Raster<std::uint8_t> img(h.width, h.height);
  in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  if (!in) throw std::runtime_error("truncated PGM: " + path.string());
  return img;
}

Raster<std::uint16_t> read_pgm16(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  const auto h = read_header(in, path);
  if (h.maxval <= 255) throw std::runtime_error("expected 16-bit PGM: " + path.string());
  Raster<std::uint16_t> img(h.width, h.height);
  for (auto& v : img.data) {
    unsigned char bytes[2];
    in.read(reinterpret_cast<char*>(bytes), 2);
    v = static_cast<std::uint16_t>((bytes[0] << 8) | bytes[1]);
  }
  if (!in) throw std::runtime_error("truncated PGM: " + path.string());
  return img;
}

void write_png(const std::filesystem::path& path, const Raster<Rgb>& img) {
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<size_t>(img.height) * (1 + 3 * img.width));
  for (int v = 0; v < img.height; ++v) {
    raw.push_back(0);  // filter: none
    for (int u = 0; u < img.width; ++u) {
      const Rgb& p = img.at(u, v);
      raw.push_back(p.r);
      raw.push_back(p.g);
      raw.push_back(p.b);
    }
  }
  uLongf packed_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> packed(packed_size);
  if (compress2(packed.data(), &packed_size, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("zlib compression failed");
  packed.resize(packed_size);

  std::vector<std::uint8_t> file = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(img.width));
  put_u32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});  // 8-bit RGB
  put_chunk(file, "IHDR", ihdr);
  put_chunk(file, "IDAT", packed);
  put_chunk(file, "IEND", {});

  auto out = open_out(path);
  out.write(reinterpret_cast<const char*>(file.data()), static_cast<std::streamsize>(file.size()));
}

}  // namespace wayfaster
