#include "cotbench/image.hpp"

#include <png.h>
#include <jpeglib.h>

#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <string>

namespace cotbench {

Raster::Raster(int w, int h, Rgb fill) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3) {
  for (std::size_t i = 0; i < pixels.size(); i += 3) {
    pixels[i] = fill.r;
    pixels[i + 1] = fill.g;
    pixels[i + 2] = fill.b;
  }
}

Rgb Raster::at(int x, int y) const {
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

void Raster::set(int x, int y, Rgb c) {
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  pixels[i] = c.r;
  pixels[i + 1] = c.g;
  pixels[i + 2] = c.b;
}

ImageFormat sniff_format(std::span<const std::uint8_t> b) {
  static constexpr std::uint8_t kPng[] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (b.size() >= 8 && std::memcmp(b.data(), kPng, 8) == 0) return ImageFormat::Png;
  if (b.size() >= 3 && b[0] == 0xff && b[1] == 0xd8 && b[2] == 0xff) return ImageFormat::Jpeg;
  if (b.size() >= 2 && b[0] == 'P' && b[1] == '6') return ImageFormat::Ppm;
  throw DecodeError("unrecognised image format");
}

std::string media_type(ImageFormat f) {
  switch (f) {
    case ImageFormat::Png: return "image/png";
    case ImageFormat::Jpeg: return "image/jpeg";
    case ImageFormat::Ppm: return "image/x-portable-pixmap";
  }
  return "application/octet-stream";
}

// ---------------------------------------------------------------------------
// PNG

namespace {

struct PngReadState {
  std::span<const std::uint8_t> data;
  std::size_t pos = 0;
};

void png_read_cb(png_structp png, png_bytep out, png_size_t n) {
  auto* st = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (st->pos + n > st->data.size()) png_error(png, "truncated PNG");
  std::memcpy(out, st->data.data() + st->pos, n);
  st->pos += n;
}

void png_error_cb(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err) *err = msg;
  png_longjmp(png, 1);
}

void png_warning_cb(png_structp, png_const_charp) {}

Raster decode_png(std::span<const std::uint8_t> bytes) {
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_cb, png_warning_cb);
  if (!png) throw DecodeError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  PngReadState st{bytes, 0};
  Raster img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DecodeError("PNG decode failed: " + err);
  }
  png_set_read_fn(png, &st, png_read_cb);
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  if (png_get_rowbytes(png, info) != static_cast<png_size_t>(w) * 3) png_error(png, "unexpected row layout");
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.pixels.resize(static_cast<std::size_t>(w) * h * 3);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = img.pixels.data() + static_cast<std::size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void png_write_cb(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void png_flush_cb(png_structp) {}

// ---------------------------------------------------------------------------
// JPEG

struct JpegErr {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit_cb(j_common_ptr cinfo) {
  auto* e = reinterpret_cast<JpegErr*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, e->message);
  std::longjmp(e->jump, 1);
}

Raster decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo{};
  JpegErr err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit_cb;
  Raster img;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw DecodeError(std::string("JPEG decode failed: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  img.width = static_cast<int>(cinfo.output_width);
  img.height = static_cast<int>(cinfo.output_height);
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * img.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

// ---------------------------------------------------------------------------
// PPM (binary P6, maxval 255)

Raster decode_ppm(std::span<const std::uint8_t> b) {
  std::size_t pos = 2;
  auto next_int = [&]() -> int {
    for (;;) {
      while (pos < b.size() && std::isspace(b[pos])) ++pos;
      if (pos < b.size() && b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= b.size() || !std::isdigit(b[pos])) throw DecodeError("malformed PPM header");
    long v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
      v = v * 10 + (b[pos++] - '0');
      if (v > 1 << 20) throw DecodeError("PPM dimension too large");
    }
    return static_cast<int>(v);
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  if (maxval != 255) throw DecodeError("only 8-bit PPM is supported");
  ++pos;  // single whitespace before raster
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (w <= 0 || h <= 0 || pos + need > b.size()) throw DecodeError("truncated PPM");
  Raster img;
  img.width = w;
  img.height = h;
  img.pixels.assign(b.begin() + static_cast<std::ptrdiff_t>(pos), b.begin() + static_cast<std::ptrdiff_t>(pos + need));
  return img;
}

}  // namespace

Raster decode_image(std::span<const std::uint8_t> bytes) {
  switch (sniff_format(bytes)) {
    case ImageFormat::Png: return decode_png(bytes);
    case ImageFormat::Jpeg: return decode_jpeg(bytes);
    case ImageFormat::Ppm: return decode_ppm(bytes);
  }
  throw DecodeError("unsupported image format");
}

std::vector<std::uint8_t> encode_png(const Raster& img) {
  std::vector<std::uint8_t> out;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_const_bytep> rows(static_cast<std::size_t>(img.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("PNG encode failed");
  }
  png_set_write_fn(png, &out, png_write_cb, png_flush_cb);
  png_set_compression_level(png, 6);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) rows[static_cast<std::size_t>(y)] = img.pixels.data() + static_cast<std::size_t>(y) * img.width * 3;
  png_write_rows(png, const_cast<png_bytepp>(rows.data()), static_cast<png_uint_32>(img.height));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

std::vector<std::uint8_t> encode_ppm(const Raster& img) {
  const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

void burn_in_region(Raster& img, const Region& r, const BurnInStyle& style) {
  if (r.x < 0 || r.y < 0 || r.w <= 0 || r.h <= 0 || static_cast<std::int64_t>(r.x) + r.w > img.width ||
      static_cast<std::int64_t>(r.y) + r.h > img.height)
    throw PreconditionError("burn_in_region: region outside image");
  if (style.stroke_px <= 0) throw PreconditionError("burn_in_region: stroke must be positive");
  const int s = style.stroke_px;
  for (int y = r.y; y < r.y + r.h; ++y) {
    const bool row_band = y < r.y + s || y >= r.y + r.h - s;
    for (int x = r.x; x < r.x + r.w; ++x) {
      if (row_band || x < r.x + s || x >= r.x + r.w - s) img.set(x, y, style.color);
    }
  }
}

std::vector<std::uint8_t> burn_in_region(std::span<const std::uint8_t> bytes, const Region& region,
                                         const BurnInStyle& style) {
  const ImageFormat fmt = sniff_format(bytes);
  Raster img = decode_image(bytes);
  burn_in_region(img, region, style);
  return fmt == ImageFormat::Ppm ? encode_ppm(img) : encode_png(img);
}

}  // namespace cotbench
