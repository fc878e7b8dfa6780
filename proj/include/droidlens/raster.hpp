#pragma once

#include <png.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "droidlens/digest.hpp"
#include "droidlens/error.hpp"
#include "droidlens/font.hpp"

namespace droidlens {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// 8-bit RGB image, row-major, no padding.
class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, Rgb fill = {255, 255, 255})
      : width_(width), height_(height), pixels_(static_cast<std::size_t>(width) * height * 3) {
    if (width < 0 || height < 0) throw Error(ErrorCode::InvalidArgument, "negative raster size");
    for (std::size_t i = 0; i < pixels_.size(); i += 3) {
      pixels_[i] = fill.r;
      pixels_[i + 1] = fill.g;
      pixels_[i + 2] = fill.b;
    }
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return width_ == 0 || height_ == 0; }
  bool contains(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  Rgb at(int x, int y) const {
    const std::size_t i = index(x, y);
    return {pixels_[i], pixels_[i + 1], pixels_[i + 2]};
  }

  void set(int x, int y, Rgb c) {
    if (!contains(x, y)) return;
    const std::size_t i = index(x, y);
    pixels_[i] = c.r;
    pixels_[i + 1] = c.g;
    pixels_[i + 2] = c.b;
  }

  std::span<const std::uint8_t> bytes() const noexcept { return pixels_; }
  std::span<std::uint8_t> bytes() noexcept { return pixels_; }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  std::size_t index(int x, int y) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 3;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Content digest over dimensions and pixels.
inline std::string raster_digest(const Raster& img) {
  std::string buf = std::to_string(img.width()) + "x" + std::to_string(img.height()) + ":";
  buf.append(reinterpret_cast<const char*>(img.bytes().data()), img.bytes().size());
  return sha256_hex(buf);
}

// ---------------------------------------------------------------------------
// Drawing

/// Fills [x0,x1) x [y0,y1), clipped to the raster.
inline void fill_rect(Raster& img, int x0, int y0, int x1, int y1, Rgb c) {
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  x1 = std::min(x1, img.width());
  y1 = std::min(y1, img.height());
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) img.set(x, y, c);
}

/// Strokes the rectangle [x0,x1) x [y0,y1) with a border drawn inward.
inline void stroke_rect(Raster& img, int x0, int y0, int x1, int y1, Rgb c, int stroke) {
  if (x1 <= x0 || y1 <= y0) return;
  stroke = std::max(1, stroke);
  const int sx = std::min(stroke, (x1 - x0 + 1) / 2);
  const int sy = std::min(stroke, (y1 - y0 + 1) / 2);
  fill_rect(img, x0, y0, x1, y0 + sy, c);
  fill_rect(img, x0, y1 - sy, x1, y1, c);
  fill_rect(img, x0, y0, x0 + sx, y1, c);
  fill_rect(img, x1 - sx, y0, x1, y1, c);
}

inline void draw_text(Raster& img, int x, int y, std::string_view s, Rgb c, int scale) {
  scale = std::max(1, scale);
  for (char ch : s) {
    const auto& g = font::glyph(ch);
    for (int row = 0; row < font::kGlyphHeight; ++row) {
      for (int col = 0; col < font::kGlyphWidth; ++col) {
        if (g[row] & (1u << (font::kGlyphWidth - 1 - col))) {
          fill_rect(img, x + col * scale, y + row * scale, x + (col + 1) * scale,
                    y + (row + 1) * scale, c);
        }
      }
    }
    x += font::kAdvance * scale;
  }
}

/// Area-averaging downscale so the long edge is at most `max_edge`.
inline Raster downscale_to_fit(const Raster& src, int max_edge) {
  const int long_edge = std::max(src.width(), src.height());
  if (long_edge <= max_edge || src.empty()) return src;
  const double f = static_cast<double>(max_edge) / long_edge;
  const int w = std::max(1, static_cast<int>(src.width() * f + 0.5));
  const int h = std::max(1, static_cast<int>(src.height() * f + 0.5));
  Raster out(w, h);
  for (int y = 0; y < h; ++y) {
    const int sy0 = static_cast<int>(static_cast<long long>(y) * src.height() / h);
    const int sy1 = std::max(sy0 + 1, static_cast<int>(static_cast<long long>(y + 1) * src.height() / h));
    for (int x = 0; x < w; ++x) {
      const int sx0 = static_cast<int>(static_cast<long long>(x) * src.width() / w);
      const int sx1 = std::max(sx0 + 1, static_cast<int>(static_cast<long long>(x + 1) * src.width() / w));
      unsigned long sr = 0, sg = 0, sb = 0, n = 0;
      for (int yy = sy0; yy < sy1; ++yy)
        for (int xx = sx0; xx < sx1; ++xx) {
          const Rgb p = src.at(xx, yy);
          sr += p.r;
          sg += p.g;
          sb += p.b;
          ++n;
        }
      out.set(x, y, {static_cast<std::uint8_t>(sr / n), static_cast<std::uint8_t>(sg / n),
                     static_cast<std::uint8_t>(sb / n)});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// PNG codec (libpng simplified API)

inline std::vector<std::uint8_t> encode_png(const Raster& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.bytes().data(), 0, nullptr))
    throw Error(ErrorCode::InvalidArgument, std::string("PNG encode: ") + image.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.bytes().data(), 0, nullptr))
    throw Error(ErrorCode::InvalidArgument, std::string("PNG encode: ") + image.message);
  out.resize(size);
  return out;
}

/// Decodes any PNG to 8-bit RGB; alpha is composited onto white.
inline Raster decode_png(std::span<const std::uint8_t> data) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, data.data(), data.size()))
    throw Error(ErrorCode::MalformedDocument, std::string("PNG decode: ") + image.message);
  image.format = PNG_FORMAT_RGB;
  Raster img(static_cast<int>(image.width), static_cast<int>(image.height));
  png_color white{255, 255, 255};
  if (!png_image_finish_read(&image, &white, img.bytes().data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(ErrorCode::MalformedDocument, std::string("PNG decode: ") + image.message);
  }
  return img;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::CorruptSession, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Raster read_png(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_png(bytes);
}

inline void write_png(const std::filesystem::path& path, const Raster& img) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::CorruptSession, "cannot write " + path.string());
}

}  // namespace droidlens
