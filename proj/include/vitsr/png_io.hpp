#pragma once

// PNG loading and saving on top of libpng. Images are decoded to 8-bit RGB
// regardless of their on-disk layout (palette, grayscale, 16-bit, alpha) and
// mapped to [0,1] floats; saving clamps, rounds, and writes 8-bit RGB.

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "vitsr/errors.hpp"
#include "vitsr/image.hpp"

namespace vitsr {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace detail

// Reads just the signature and IHDR to get the pixel dimensions without
// decoding; used to scan datasets quickly.
struct PngDims {
  int width = 0;
  int height = 0;
};

inline PngDims png_dimensions(const std::string& path) {
  detail::FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw DataError("cannot open " + path);
  unsigned char head[24];
  if (std::fread(head, 1, sizeof(head), f.get()) != sizeof(head))
    throw DataError(path + ": truncated PNG header");
  static const unsigned char sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  for (int i = 0; i < 8; ++i)
    if (head[i] != sig[i]) throw DataError(path + ": not a PNG file");
  if (!(head[12] == 'I' && head[13] == 'H' && head[14] == 'D' && head[15] == 'R'))
    throw DataError(path + ": missing IHDR chunk");
  auto be32 = [&](int off) {
    return (static_cast<std::uint32_t>(head[off]) << 24) |
           (static_cast<std::uint32_t>(head[off + 1]) << 16) |
           (static_cast<std::uint32_t>(head[off + 2]) << 8) |
           static_cast<std::uint32_t>(head[off + 3]);
  };
  PngDims d;
  d.width = static_cast<int>(be32(16));
  d.height = static_cast<int>(be32(20));
  if (d.width <= 0 || d.height <= 0) throw DataError(path + ": bad PNG dimensions");
  return d;
}

inline Image load_png(const std::string& path) {
  detail::FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw DataError("cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng init failed");
  }

  // Buffers live outside the setjmp scope so the error path stays leak-free.
  std::vector<unsigned char> interleaved;
  std::vector<png_bytep> rows;
  int width = 0, height = 0;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError(path + ": PNG decode failed");
  }

  png_init_io(png, f.get());
  png_read_info(png, info);
  width = static_cast<int>(png_get_image_width(png, info));
  height = static_cast<int>(png_get_image_height(png, info));
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const std::size_t stride = png_get_rowbytes(png, info);
  interleaved.resize(stride * static_cast<std::size_t>(height));
  rows.resize(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = interleaved.data() + stride * static_cast<std::size_t>(y);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (stride < static_cast<std::size_t>(width) * 3)
    throw DataError(path + ": unexpected PNG row layout");
  Image img = make_image(width, height, 3);
  const std::size_t plane = static_cast<std::size_t>(width) * height;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const unsigned char* px = interleaved.data() + stride * static_cast<std::size_t>(y) +
                                static_cast<std::size_t>(x) * 3;
      for (int c = 0; c < 3; ++c)
        img.pixels[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * width + x] =
            static_cast<float>(px[c]) / 255.0f;
    }
  return img;
}

inline void save_png(const std::string& path, const Image& img) {
  if (img.channels != 3) throw DataError("save_png: expected a 3-channel image");
  detail::FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw DataError("cannot write " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng init failed");
  }

  std::vector<unsigned char> interleaved(static_cast<std::size_t>(img.width) * img.height * 3);
  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) {
      const float v = std::clamp(img.pixels[static_cast<std::size_t>(c) * plane + i], 0.0f, 1.0f);
      interleaved[i * 3 + static_cast<std::size_t>(c)] =
          static_cast<unsigned char>(std::lround(v * 255.0f));
    }
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<std::size_t>(y)] =
        interleaved.data() + static_cast<std::size_t>(y) * img.width * 3;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError(path + ": PNG encode failed");
  }

  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace vitsr
