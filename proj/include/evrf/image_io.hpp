#pragma once

// Minimal image container plus writers: 8-bit PNG (via zlib) for viewing
// and a raw f32 planar format for lossless metric computation.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "evrf/math.hpp"

namespace evrf {

// Row-major, interleaved channels, values nominally in [0, 1].
struct Image {
  int width{0}, height{0}, channels{0};
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, 0.0) {}

  double& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  void set_rgb(int x, int y, Vec3d rgb) {
    at(x, y, 0) = rgb.x;
    at(x, y, 1) = rgb.y;
    at(x, y, 2) = rgb.z;
  }
};

namespace detail {

inline void put_be32(std::vector<std::uint8_t>& buf, std::uint32_t v) {
  buf.push_back(static_cast<std::uint8_t>(v >> 24));
  buf.push_back(static_cast<std::uint8_t>(v >> 16));
  buf.push_back(static_cast<std::uint8_t>(v >> 8));
  buf.push_back(static_cast<std::uint8_t>(v));
}

inline void png_chunk(std::vector<std::uint8_t>& out, const char type[4],
                      const std::vector<std::uint8_t>& payload) {
  put_be32(out, static_cast<std::uint32_t>(payload.size()));
  std::vector<std::uint8_t> body(type, type + 4);
  body.insert(body.end(), payload.begin(), payload.end());
  out.insert(out.end(), body.begin(), body.end());
  put_be32(out, static_cast<std::uint32_t>(crc32(0, body.data(), body.size())));
}

}  // namespace detail

// 8-bit PNG, grayscale (1 channel) or RGB (3 channels); values clamped to
// [0, 1] before quantization.
inline void save_png(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw std::invalid_argument("save_png: 1 or 3 channels required");
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(img.height) *
              (1 + static_cast<std::size_t>(img.width) * img.channels));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);  // filter: none
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double v = img.at(x, y, c);
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        raw.push_back(static_cast<std::uint8_t>(v * 255.0 + 0.5));
      }
  }
  uLongf comp_len = compressBound(raw.size());
  std::vector<std::uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), raw.size(), 9) != Z_OK)
    throw std::runtime_error("save_png: zlib compression failed");
  comp.resize(comp_len);

  std::vector<std::uint8_t> out{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<std::uint8_t> ihdr;
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.width));
  detail::put_be32(ihdr, static_cast<std::uint32_t>(img.height));
  ihdr.push_back(8);                                  // bit depth
  ihdr.push_back(img.channels == 3 ? 2 : 0);          // color type
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", comp);
  detail::png_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_png: cannot open " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
}

// Raw planar f32: magic "EVIM", u32 width/height/channels (little endian),
// then channel planes.
inline void save_raw(const std::string& path, const Image& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_raw: cannot open " + path);
  f.write("EVIM", 4);
  const std::uint32_t dims[3] = {static_cast<std::uint32_t>(img.width),
                                 static_cast<std::uint32_t>(img.height),
                                 static_cast<std::uint32_t>(img.channels)};
  f.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const float v = static_cast<float>(img.at(x, y, c));
        f.write(reinterpret_cast<const char*>(&v), sizeof(v));
      }
}

inline Image load_raw(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_raw: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "EVIM", 4) != 0)
    throw std::runtime_error("load_raw: bad magic in " + path);
  std::uint32_t dims[3];
  f.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!f) throw std::runtime_error("load_raw: truncated header in " + path);
  Image img(static_cast<int>(dims[0]), static_cast<int>(dims[1]),
            static_cast<int>(dims[2]));
  for (std::uint32_t c = 0; c < dims[2]; ++c)
    for (std::uint32_t y = 0; y < dims[1]; ++y)
      for (std::uint32_t x = 0; x < dims[0]; ++x) {
        float v;
        f.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (!f) throw std::runtime_error("load_raw: truncated data in " + path);
        img.at(static_cast<int>(x), static_cast<int>(y), static_cast<int>(c)) = v;
      }
  return img;
}

}  // namespace evrf
