#pragma once

#include <cstdint>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include "opseg/core.hpp"

namespace opseg {

/// 8-bit RGB raster, row-major, 3 bytes per pixel.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

/// Decode any PNG to RGB8. Palette, grayscale, 16-bit and alpha variants are
/// normalized; alpha is stripped.
inline RgbImage read_png_rgb8(const std::string& path) {
  detail::FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw std::runtime_error("cannot open PNG file: " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("failed to decode PNG: " + path);
  }

  png_init_io(png, file.get());
  png_read_info(png, info);

  png_set_expand(png);            // palette / low-bit gray to full depth
  png_set_strip_16(png);          // 16-bit down to 8
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  RgbImage img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * 3);

  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = img.pixels.data() + static_cast<std::size_t>(y) * img.width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

/// Encode RGB8 with fixed settings (filter NONE, zlib level 6) so identical
/// rasters always produce identical bytes.
inline void write_png_rgb8(const std::string& path, const RgbImage& img) {
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * 3)
    throw std::invalid_argument("write_png_rgb8: pixel buffer size mismatch");
  detail::FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw std::runtime_error("cannot create PNG file: " + path);

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed to encode PNG: " + path);
  }

  png_init_io(png, file.get());
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_set_compression_level(png, 6);
  png_write_info(png, info);

  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(img.pixels.data() +
                                    static_cast<std::size_t>(y) * img.width * 3);
  png_write_image(png, rows.data());
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
}

// COCO panoptic id encoding: id = R + 256*G + 65536*B.

inline SegmentId segment_id_from_rgb(std::uint8_t r, std::uint8_t g,
                                     std::uint8_t b) {
  return static_cast<SegmentId>(r) + 256u * g + 65536u * b;
}

inline void rgb_from_segment_id(SegmentId id, std::uint8_t& r, std::uint8_t& g,
                                std::uint8_t& b) {
  if (id > 0xFFFFFFu)
    throw std::invalid_argument("segment id " + std::to_string(id) +
                                " exceeds the 24-bit PNG encoding");
  r = static_cast<std::uint8_t>(id & 0xFFu);
  g = static_cast<std::uint8_t>((id >> 8) & 0xFFu);
  b = static_cast<std::uint8_t>((id >> 16) & 0xFFu);
}

inline std::vector<SegmentId> decode_segment_ids(const RgbImage& img) {
  std::vector<SegmentId> ids(static_cast<std::size_t>(img.width) * img.height);
  for (std::size_t i = 0; i < ids.size(); ++i)
    ids[i] = segment_id_from_rgb(img.pixels[3 * i], img.pixels[3 * i + 1],
                                 img.pixels[3 * i + 2]);
  return ids;
}

inline RgbImage encode_segment_ids(const PanopticMap& map) {
  RgbImage img;
  img.width = map.width;
  img.height = map.height;
  img.pixels.resize(map.pixels.size() * 3);
  for (std::size_t i = 0; i < map.pixels.size(); ++i)
    rgb_from_segment_id(map.pixels[i], img.pixels[3 * i], img.pixels[3 * i + 1],
                        img.pixels[3 * i + 2]);
  return img;
}

}  // namespace opseg
