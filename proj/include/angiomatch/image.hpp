#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <zlib.h>

#include "angiomatch/errors.hpp"

namespace angiomatch {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
};

struct FloatImage {
  int width = 0;
  int height = 0;
  std::vector<double> data;  // row-major

  FloatImage() = default;
  FloatImage(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 3 bytes per pixel

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
    pixels[i] = r;
    pixels[i + 1] = g;
    pixels[i + 2] = b;
  }
  bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
};

inline FloatImage to_float(const GrayImage& im, double scale = 1.0 / 255.0) {
  FloatImage out(im.width, im.height);
  for (std::size_t i = 0; i < im.pixels.size(); ++i) out.data[i] = im.pixels[i] * scale;
  return out;
}

inline GrayImage to_gray(const FloatImage& im, double lo = 0.0, double hi = 1.0) {
  GrayImage out(im.width, im.height);
  const double s = 255.0 / (hi - lo);
  for (std::size_t i = 0; i < im.data.size(); ++i) {
    double v = (im.data[i] - lo) * s;
    out.pixels[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0) + 0.5);
  }
  return out;
}

// ---------------------------------------------------------------------------
// PGM (binary P5, maxval 255)

inline void write_pgm(const std::string& path, const GrayImage& im) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "P5\n" << im.width << " " << im.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(im.pixels.data()),
          static_cast<std::streamsize>(im.pixels.size()));
  if (!f) throw IoError("short write: " + path);
}

inline GrayImage read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::string magic;
  f >> magic;
  if (magic != "P5") throw FormatError("not a binary PGM (P5): " + path);
  auto next_int = [&f, &path]() {
    // skips whitespace and '#' comment lines
    int c = f.peek();
    while (c == '#' || std::isspace(c)) {
      if (c == '#') {
        std::string line;
        std::getline(f, line);
      } else {
        f.get();
      }
      c = f.peek();
    }
    long v = -1;
    f >> v;
    if (!f || v < 0) throw FormatError("bad PGM header: " + path);
    return static_cast<int>(v);
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw FormatError("unsupported PGM maxval: " + path);
  f.get();  // single whitespace after header
  GrayImage im(w, h);
  f.read(reinterpret_cast<char*>(im.pixels.data()), static_cast<std::streamsize>(im.pixels.size()));
  if (!f) throw FormatError("truncated PGM payload: " + path);
  return im;
}

// ---------------------------------------------------------------------------
// PNG writer (8-bit grayscale or RGB, zlib-compressed, filter type 0)

namespace detail {

inline void png_put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline void png_chunk(std::vector<std::uint8_t>& out, const char tag[4],
                      const std::uint8_t* data, std::size_t n) {
  png_put_u32(out, static_cast<std::uint32_t>(n));
  std::size_t start = out.size();
  out.insert(out.end(), tag, tag + 4);
  if (n) out.insert(out.end(), data, data + n);
  std::uint32_t crc = static_cast<std::uint32_t>(
      ::crc32(0, out.data() + start, static_cast<uInt>(out.size() - start)));
  png_put_u32(out, crc);
}

inline void write_png_impl(const std::string& path, int width, int height, int channels,
                           const std::uint8_t* pixels) {
  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * height);
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);  // filter: none
    raw.insert(raw.end(), pixels + y * stride, pixels + (y + 1) * stride);
  }
  uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> zdata(bound);
  if (::compress2(zdata.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw IoError("zlib compression failed: " + path);
  zdata.resize(bound);

  std::vector<std::uint8_t> out;
  static const std::uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  out.insert(out.end(), sig, sig + 8);
  std::uint8_t ihdr[13];
  ihdr[0] = static_cast<std::uint8_t>(width >> 24);
  ihdr[1] = static_cast<std::uint8_t>(width >> 16);
  ihdr[2] = static_cast<std::uint8_t>(width >> 8);
  ihdr[3] = static_cast<std::uint8_t>(width);
  ihdr[4] = static_cast<std::uint8_t>(height >> 24);
  ihdr[5] = static_cast<std::uint8_t>(height >> 16);
  ihdr[6] = static_cast<std::uint8_t>(height >> 8);
  ihdr[7] = static_cast<std::uint8_t>(height);
  ihdr[8] = 8;                                         // bit depth
  ihdr[9] = (channels == 1) ? 0 : 2;                   // gray / truecolor
  ihdr[10] = ihdr[11] = ihdr[12] = 0;
  png_chunk(out, "IHDR", ihdr, 13);
  png_chunk(out, "IDAT", zdata.data(), zdata.size());
  png_chunk(out, "IEND", nullptr, 0);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write: " + path);
}

}  // namespace detail

inline void write_png(const std::string& path, const GrayImage& im) {
  detail::write_png_impl(path, im.width, im.height, 1, im.pixels.data());
}

inline void write_png(const std::string& path, const RgbImage& im) {
  detail::write_png_impl(path, im.width, im.height, 3, im.pixels.data());
}

// ---------------------------------------------------------------------------
// Filtering

// Normalized horizontal+vertical box blur with window clamped at the borders,
// so constant images stay exactly constant.
inline FloatImage box_blur(const FloatImage& im, int radius) {
  if (radius <= 0) return im;
  const int w = im.width, h = im.height;
  FloatImage tmp(w, h), out(w, h);
  for (int y = 0; y < h; ++y) {
    double run = 0.0;
    for (int x = 0; x <= std::min(radius, w - 1); ++x) run += im.at(x, y);
    for (int x = 0; x < w; ++x) {
      int lo = std::max(0, x - radius), hi = std::min(w - 1, x + radius);
      tmp.at(x, y) = run / (hi - lo + 1);
      if (x + radius + 1 <= w - 1) run += im.at(x + radius + 1, y);
      if (x - radius >= 0) run -= im.at(x - radius, y);
    }
  }
  for (int x = 0; x < w; ++x) {
    double run = 0.0;
    for (int y = 0; y <= std::min(radius, h - 1); ++y) run += tmp.at(x, y);
    for (int y = 0; y < h; ++y) {
      int lo = std::max(0, y - radius), hi = std::min(h - 1, y + radius);
      out.at(x, y) = run / (hi - lo + 1);
      if (y + radius + 1 <= h - 1) run += tmp.at(x, y + radius + 1);
      if (y - radius >= 0) run -= tmp.at(x, y - radius);
    }
  }
  return out;
}

// Three chained box blurs approximate a Gaussian of the given sigma; cost is
// independent of sigma. Used for the heavy context blurs.
inline FloatImage box_gaussian(const FloatImage& im, double sigma) {
  if (sigma <= 0) return im;
  // box radius so that three passes give variance ~= sigma^2
  int r = std::max(1, static_cast<int>(std::lround(std::sqrt(sigma * sigma / 3.0 * 4.0 + 1.0) / 2.0)));
  FloatImage out = box_blur(im, r);
  out = box_blur(out, r);
  out = box_blur(out, r);
  return out;
}

// Exact separable Gaussian with replicate padding, kernel truncated at 3 sigma.
inline FloatImage gaussian_blur(const FloatImage& im, double sigma) {
  if (sigma <= 0) return im;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;

  const int w = im.width, h = im.height;
  FloatImage tmp(w, h), out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[i + radius] * im.at(std::clamp(x + i, 0, w - 1), y);
      tmp.at(x, y) = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i)
        acc += k[i + radius] * tmp.at(x, std::clamp(y + i, 0, h - 1));
      out.at(x, y) = acc;
    }
  return out;
}

// Mean-pool by an integer factor (image dimensions need not be multiples;
// edge cells average the partial window).
inline FloatImage downsample_mean(const FloatImage& im, int factor) {
  const int w = (im.width + factor - 1) / factor;
  const int h = (im.height + factor - 1) / factor;
  FloatImage out(w, h);
  for (int cy = 0; cy < h; ++cy)
    for (int cx = 0; cx < w; ++cx) {
      double acc = 0.0;
      int n = 0;
      for (int y = cy * factor; y < std::min((cy + 1) * factor, im.height); ++y)
        for (int x = cx * factor; x < std::min((cx + 1) * factor, im.width); ++x) {
          acc += im.at(x, y);
          ++n;
        }
      out.at(cx, cy) = acc / n;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Squared Euclidean distance transform (Felzenszwalb & Huttenlocher).
// Input: binary mask; output: squared distance in pixels to the nearest
// zero pixel (0 on background).

namespace detail {

inline void edt_1d(const std::vector<double>& f, std::vector<double>& d, int n) {
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    d[q] = (q - v[k]) * (q - v[k]) + f[v[k]];
  }
}

}  // namespace detail

inline FloatImage distance_transform_squared(const GrayImage& mask) {
  const int w = mask.width, h = mask.height;
  const double inf = 1e20;
  FloatImage g(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) g.at(x, y) = mask.at(x, y) ? inf : 0.0;

  std::vector<double> f(std::max(w, h)), d(std::max(w, h));
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = g.at(x, y);
    detail::edt_1d(f, d, h);
    for (int y = 0; y < h; ++y) g.at(x, y) = d[y];
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f[x] = g.at(x, y);
    detail::edt_1d(f, d, w);
    for (int x = 0; x < w; ++x) g.at(x, y) = d[x];
  }
  return g;
}

// ---------------------------------------------------------------------------
// Drawing (overlays and mask rasterization)

inline void fill_disk(GrayImage& im, double cx, double cy, double r, std::uint8_t value) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
  const int x1 = std::min(im.width - 1, static_cast<int>(std::ceil(cx + r)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
  const int y1 = std::min(im.height - 1, static_cast<int>(std::ceil(cy + r)));
  const double r2 = r * r;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy <= r2) im.at(x, y) = value;
    }
}

inline void fill_disk_max(FloatImage& im, double cx, double cy, double r, double value) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
  const int x1 = std::min(im.width - 1, static_cast<int>(std::ceil(cx + r)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
  const int y1 = std::min(im.height - 1, static_cast<int>(std::ceil(cy + r)));
  const double r2 = r * r;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy <= r2) im.at(x, y) = std::max(im.at(x, y), value);
    }
}

inline void draw_line(RgbImage& im, double x0, double y0, double x1, double y1,
                      std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const double len = std::hypot(x1 - x0, y1 - y0);
  const int steps = std::max(1, static_cast<int>(std::ceil(len)));
  for (int i = 0; i <= steps; ++i) {
    double t = static_cast<double>(i) / steps;
    int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
    int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
    if (im.in_bounds(x, y)) im.set(x, y, r, g, b);
  }
}

inline void draw_dot(RgbImage& im, double cx, double cy, int radius,
                     std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dx * dx + dy * dy > radius * radius) continue;
      int x = static_cast<int>(std::lround(cx)) + dx;
      int y = static_cast<int>(std::lround(cy)) + dy;
      if (im.in_bounds(x, y)) im.set(x, y, r, g, b);
    }
}

// 5x7 bitmap glyphs for annotating overlays with numbers ("2.57 px").
namespace detail {

inline const std::uint8_t* glyph5x7(char c) {
  static const std::uint8_t digits[10][7] = {
      {0x0e, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0e}, {0x04, 0x0c, 0x04, 0x04, 0x04, 0x04, 0x0e},
      {0x0e, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1f}, {0x1f, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0e},
      {0x02, 0x06, 0x0a, 0x12, 0x1f, 0x02, 0x02}, {0x1f, 0x10, 0x1e, 0x01, 0x01, 0x11, 0x0e},
      {0x06, 0x08, 0x10, 0x1e, 0x11, 0x11, 0x0e}, {0x1f, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08},
      {0x0e, 0x11, 0x11, 0x0e, 0x11, 0x11, 0x0e}, {0x0e, 0x11, 0x11, 0x0f, 0x01, 0x02, 0x0c}};
  static const std::uint8_t dot[7] = {0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x0c};
  static const std::uint8_t plus[7] = {0x00, 0x04, 0x04, 0x1f, 0x04, 0x04, 0x00};
  static const std::uint8_t minus[7] = {0x00, 0x00, 0x00, 0x1f, 0x00, 0x00, 0x00};
  static const std::uint8_t p[7] = {0x00, 0x00, 0x1e, 0x11, 0x1e, 0x10, 0x10};
  static const std::uint8_t x[7] = {0x00, 0x00, 0x11, 0x0a, 0x04, 0x0a, 0x11};
  static const std::uint8_t e[7] = {0x00, 0x00, 0x0e, 0x11, 0x1f, 0x10, 0x0e};
  static const std::uint8_t blank[7] = {0, 0, 0, 0, 0, 0, 0};
  if (c >= '0' && c <= '9') return digits[c - '0'];
  switch (c) {
    case '.': return dot;
    case '+': return plus;
    case '-': return minus;
    case 'p': return p;
    case 'x': return x;
    case 'e': return e;
    default: return blank;
  }
}

}  // namespace detail

inline void draw_text(RgbImage& im, int x0, int y0, const std::string& text,
                      std::uint8_t r, std::uint8_t g, std::uint8_t b, int scale = 2) {
  int cx = x0;
  for (char c : text) {
    const std::uint8_t* glyph = detail::glyph5x7(c);
    for (int row = 0; row < 7; ++row)
      for (int col = 0; col < 5; ++col)
        if (glyph[row] & (1 << (4 - col)))
          for (int sy = 0; sy < scale; ++sy)
            for (int sx = 0; sx < scale; ++sx) {
              int px = cx + col * scale + sx, py = y0 + row * scale + sy;
              if (im.in_bounds(px, py)) im.set(px, py, r, g, b);
            }
    cx += 6 * scale;
  }
}

}  // namespace angiomatch
