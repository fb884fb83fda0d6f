#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

namespace ldct {

/// 8-bit RGB raster.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  ///< row-major RGB triples

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {}

  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    auto* p = &pixels[(static_cast<std::size_t>(y) * width + x) * 3];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
};

/// Draws `text` with a 5x7 bitmap font (upper-cased; unknown glyphs render
/// as blanks). Each glyph cell is 6*scale pixels wide.
void draw_text(RgbImage& image, int x, int y, std::string_view text, int scale = 1,
               std::uint8_t r = 255, std::uint8_t g = 255, std::uint8_t b = 255);

int text_width(std::string_view text, int scale = 1);

/// Writes a PNG with fixed compression settings and no timestamp chunk, so
/// equal rasters produce equal files.
void write_png(const std::filesystem::path& path, const RgbImage& image);

}  // namespace ldct
