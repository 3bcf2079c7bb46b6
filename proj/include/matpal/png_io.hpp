#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "matpal/error.hpp"
#include "matpal/image.hpp"

namespace matpal {

namespace png_detail {

struct ReadCursor {
  std::span<const std::uint8_t> bytes;
  std::size_t offset = 0;
};

inline void on_error(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}
inline void on_warning(png_structp, png_const_charp) {}

inline void read_fn(png_structp png, png_bytep out, png_size_t n) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->offset + n > cur->bytes.size()) png_error(png, "truncated png");
  std::memcpy(out, cur->bytes.data() + cur->offset, n);
  cur->offset += n;
}

inline void write_fn(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}
inline void flush_fn(png_structp) {}

}  // namespace png_detail

// Encodes values in [0,1] (clamped) as an 8- or 16-bit PNG with 1, 3 or 4
// channels. No colour transform is applied here.
inline std::vector<std::uint8_t> encode_png(const Image& img, int bit_depth = 8) {
  require(bit_depth == 8 || bit_depth == 16, ErrorCode::invalid_argument, "png bit depth");
  require(img.channels() == 1 || img.channels() == 3 || img.channels() == 4,
          ErrorCode::invalid_argument, "png channel count");
  require(!img.empty(), ErrorCode::invalid_argument, "empty image");
  std::vector<std::uint8_t> out;
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err,
                                            png_detail::on_error, png_detail::on_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) fail(ErrorCode::io, "png allocation failed");
  const int bytes_per = bit_depth / 8;
  const std::size_t row_bytes = static_cast<std::size_t>(img.width()) * img.channels() * bytes_per;
  std::vector<std::uint8_t> rows(row_bytes * img.height());
  const double levels = bit_depth == 8 ? 255.0 : 65535.0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) {
        const auto v = static_cast<std::uint32_t>(
            std::lround(std::clamp(img.at(y, x, c), 0.0, 1.0) * levels));
        std::uint8_t* p = rows.data() + y * row_bytes +
                          (static_cast<std::size_t>(x) * img.channels() + c) * bytes_per;
        if (bit_depth == 8) {
          p[0] = static_cast<std::uint8_t>(v);
        } else {
          p[0] = static_cast<std::uint8_t>(v >> 8);
          p[1] = static_cast<std::uint8_t>(v & 0xff);
        }
      }
  std::vector<png_bytep> row_ptrs(img.height());
  for (int y = 0; y < img.height(); ++y) row_ptrs[y] = rows.data() + y * row_bytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::io, "png encode: " + err);
  }
  png_set_write_fn(png, &out, png_detail::write_fn, png_detail::flush_fn);
  const int color_type = img.channels() == 1   ? PNG_COLOR_TYPE_GRAY
                         : img.channels() == 3 ? PNG_COLOR_TYPE_RGB
                                               : PNG_COLOR_TYPE_RGBA;
  png_set_IHDR(png, info, img.width(), img.height(), bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // Fixed compression settings keep the output bytes reproducible.
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

struct DecodedPng {
  Image image;
  int bit_depth = 8;
};

// Decodes to [0,1] values. Palette images are expanded; alpha is dropped
// unless `keep_alpha` is set.
inline DecodedPng decode_png(std::span<const std::uint8_t> bytes, bool keep_alpha = false) {
  require(bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0, ErrorCode::invalid_input,
          "not a png stream");
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_detail::on_error,
                                           png_detail::on_warning);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) fail(ErrorCode::io, "png allocation failed");
  png_detail::ReadCursor cursor{bytes, 0};
  std::vector<std::uint8_t> rows;
  std::vector<png_bytep> row_ptrs;
  DecodedPng result;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::invalid_input, "png decode: " + err);
  }
  png_set_read_fn(png, &cursor, png_detail::read_fn);
  png_read_info(png, info);
  int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (bit_depth < 8) bit_depth = 8;
  if (bit_depth == 16) png_set_swap(png);  // little-endian samples in memory
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int ch = png_get_channels(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  rows.resize(row_bytes * h);
  row_ptrs.resize(h);
  for (int y = 0; y < h; ++y) row_ptrs[y] = rows.data() + y * row_bytes;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const bool has_alpha = ch == 2 || ch == 4;
  const int color_ch = has_alpha ? ch - 1 : ch;
  const int out_ch = keep_alpha ? ch : color_ch;
  Image img(w, h, out_ch);
  const double levels = bit_depth == 16 ? 65535.0 : 255.0;
  const int bytes_per = bit_depth / 8;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < out_ch; ++c) {
        const std::uint8_t* p =
            rows.data() + y * row_bytes + (static_cast<std::size_t>(x) * ch + c) * bytes_per;
        const std::uint32_t v = bytes_per == 1 ? p[0] : (p[0] | (p[1] << 8));
        img.at(y, x, c) = v / levels;
      }
  result.image = std::move(img);
  result.bit_depth = bit_depth;
  return result;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path,
                             std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

inline Image read_png(const std::filesystem::path& path) {
  return decode_png(read_file_bytes(path)).image;
}

inline void write_png(const std::filesystem::path& path, const Image& img, int bit_depth = 8) {
  write_file_bytes(path, encode_png(img, bit_depth));
}

// Mask convention: single channel, any 8-bit value above 127 is inside.
inline std::vector<std::uint8_t> mask_from_image(const Image& img) {
  const Image gray = img.channels() == 1 ? img : luminance(img);
  std::vector<std::uint8_t> m(gray.pixel_count());
  for (std::size_t i = 0; i < m.size(); ++i)
    m[i] = std::lround(gray.data()[i] * 255.0) > 127 ? 1 : 0;
  return m;
}

}  // namespace matpal
