#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cotbench/error.hpp"
#include "cotbench/model.hpp"

namespace cotbench {

class DecodeError : public DataError {
 public:
  using DataError::DataError;
};

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

// 8-bit RGB, row-major, no padding.
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  Raster() = default;
  Raster(int w, int h, Rgb fill = {255, 255, 255});

  Rgb at(int x, int y) const;
  void set(int x, int y, Rgb c);
  bool operator==(const Raster&) const = default;
};

enum class ImageFormat { Png, Jpeg, Ppm };

ImageFormat sniff_format(std::span<const std::uint8_t> bytes);
std::string media_type(ImageFormat f);

Raster decode_image(std::span<const std::uint8_t> bytes);
// PNG output is deterministic for a given raster (fixed compression settings).
std::vector<std::uint8_t> encode_png(const Raster& img);
std::vector<std::uint8_t> encode_ppm(const Raster& img);

struct BurnInStyle {
  Rgb color{255, 0, 0};
  int stroke_px = 3;
};

// Draws the region's border as a band of stroke_px pixels lying inside the
// region. Pixels outside the band are untouched.
void burn_in_region(Raster& img, const Region& region, const BurnInStyle& style);

// Decodes, draws, re-encodes. PPM input stays PPM; PNG and JPEG become PNG.
std::vector<std::uint8_t> burn_in_region(std::span<const std::uint8_t> image_bytes, const Region& region,
                                         const BurnInStyle& style);

}  // namespace cotbench
