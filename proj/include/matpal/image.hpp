#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "matpal/error.hpp"

namespace matpal {

// Row-major, channel-interleaved image of doubles.
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, double fill = 0.0)
      : width_(width), height_(height), channels_(channels) {
    require(width >= 0 && height >= 0 && channels >= 1, ErrorCode::invalid_argument,
            "bad image dimensions");
    data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * height_;
  }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& at(int y, int x, int c = 0) noexcept {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  double at(int y, int x, int c = 0) const noexcept {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  // Periodic access.
  double wrap(int y, int x, int c = 0) const noexcept {
    y %= height_;
    x %= width_;
    if (y < 0) y += height_;
    if (x < 0) x += width_;
    return at(y, x, c);
  }

  // Edge-clamped access.
  double clamped(int y, int x, int c = 0) const noexcept {
    return at(std::clamp(y, 0, height_ - 1), std::clamp(x, 0, width_ - 1), c);
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }

  bool same_shape(const Image& o) const noexcept {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }
  bool same_extent(const Image& o) const noexcept {
    return width_ == o.width_ && height_ == o.height_;
  }

  friend bool operator==(const Image& a, const Image& b) {
    return a.same_shape(b) && a.data_ == b.data_;
  }

  std::string shape_string() const {
    return std::to_string(height_) + "x" + std::to_string(width_) + "x" +
           std::to_string(channels_);
  }

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
  require(a.same_shape(b), ErrorCode::shape_mismatch,
          std::string(what) + ": " + a.shape_string() + " vs " + b.shape_string());
}

inline Image constant_image(int width, int height, std::span<const double> value) {
  Image out(width, height, static_cast<int>(value.size()));
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = value[i % value.size()];
  return out;
}

inline std::vector<double> channel_means(const Image& img) {
  std::vector<double> m(img.channels(), 0.0);
  const auto d = img.data();
  for (std::size_t i = 0; i < d.size(); ++i) m[i % img.channels()] += d[i];
  for (auto& v : m) v /= static_cast<double>(std::max<std::size_t>(img.pixel_count(), 1));
  return m;
}

inline Image clamp01(Image img) {
  for (auto& v : img.data()) v = std::clamp(v, 0.0, 1.0);
  return img;
}

inline Image extract_channel(const Image& img, int c) {
  Image out(img.width(), img.height(), 1);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out.at(y, x) = img.at(y, x, c);
  return out;
}

inline Image luminance(const Image& img) {
  if (img.channels() == 1) return img;
  Image out(img.width(), img.height(), 1);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      if (img.channels() >= 3)
        out.at(y, x) = 0.2126 * img.at(y, x, 0) + 0.7152 * img.at(y, x, 1) +
                       0.0722 * img.at(y, x, 2);
      else
        out.at(y, x) = img.at(y, x, 0);
    }
  return out;
}

inline Image crop(const Image& img, int x0, int y0, int w, int h) {
  require(x0 >= 0 && y0 >= 0 && x0 + w <= img.width() && y0 + h <= img.height(),
          ErrorCode::invalid_argument, "crop window outside image");
  Image out(w, h, img.channels());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
  return out;
}

inline Image center_crop(const Image& img, int w, int h) {
  return crop(img, (img.width() - w) / 2, (img.height() - h) / 2, w, h);
}

// Toroidal shift: out(y, x) = in((y - dy) mod H, (x - dx) mod W).
inline Image roll(const Image& img, int dx, int dy) {
  const int w = img.width(), h = img.height();
  Image out(w, h, img.channels());
  if (img.empty()) return out;
  const int sx = ((dx % w) + w) % w, sy = ((dy % h) + h) % h;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < img.channels(); ++c)
        out.at((y + sy) % h, (x + sx) % w, c) = img.at(y, x, c);
  return out;
}

// One of the 8 square symmetries. Bit 2 transposes, then bit 0 mirrors x
// and bit 1 mirrors y.
inline Image dihedral(const Image& img, int k) {
  const bool transpose = k & 4, fx = k & 1, fy = k & 2;
  const int w = transpose ? img.height() : img.width();
  const int h = transpose ? img.width() : img.height();
  Image out(w, h, img.channels());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int sx = fx ? w - 1 - x : x, sy = fy ? h - 1 - y : y;
      if (transpose) std::swap(sx, sy);
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  return out;
}

// Bilinear resampling with pixel-center alignment. When shrinking by more
// than 2x the source is box-filtered first so detail is not aliased away.
inline Image resize_bilinear(const Image& src, int width, int height) {
  require(width > 0 && height > 0 && !src.empty(), ErrorCode::invalid_argument,
          "resize to empty image");
  if (width == src.width() && height == src.height()) return src;
  const Image* in = &src;
  Image reduced;
  const int fx = src.width() / width, fy = src.height() / height;
  if (fx >= 2 || fy >= 2) {
    const int bx = std::max(fx, 1), by = std::max(fy, 1);
    reduced = Image(src.width() / bx, src.height() / by, src.channels());
    for (int y = 0; y < reduced.height(); ++y)
      for (int x = 0; x < reduced.width(); ++x)
        for (int c = 0; c < src.channels(); ++c) {
          double s = 0.0;
          for (int j = 0; j < by; ++j)
            for (int i = 0; i < bx; ++i) s += src.at(y * by + j, x * bx + i, c);
          reduced.at(y, x, c) = s / (bx * by);
        }
    in = &reduced;
    if (reduced.width() == width && reduced.height() == height) return reduced;
  }
  Image out(width, height, in->channels());
  const double sx = static_cast<double>(in->width()) / width;
  const double sy = static_cast<double>(in->height()) / height;
  for (int y = 0; y < height; ++y) {
    const double fyp = std::clamp((y + 0.5) * sy - 0.5, 0.0, in->height() - 1.0);
    const int y0 = static_cast<int>(fyp);
    const int y1 = std::min(y0 + 1, in->height() - 1);
    const double ty = fyp - y0;
    for (int x = 0; x < width; ++x) {
      const double fxp = std::clamp((x + 0.5) * sx - 0.5, 0.0, in->width() - 1.0);
      const int x0 = static_cast<int>(fxp);
      const int x1 = std::min(x0 + 1, in->width() - 1);
      const double tx = fxp - x0;
      for (int c = 0; c < in->channels(); ++c) {
        const double top = in->at(y0, x0, c) * (1 - tx) + in->at(y0, x1, c) * tx;
        const double bot = in->at(y1, x0, c) * (1 - tx) + in->at(y1, x1, c) * tx;
        out.at(y, x, c) = top * (1 - ty) + bot * ty;
      }
    }
  }
  return out;
}

inline double srgb_gamma_encode(double v) { return std::pow(std::clamp(v, 0.0, 1.0), 1.0 / 2.2); }
inline double srgb_gamma_decode(double v) { return std::pow(std::clamp(v, 0.0, 1.0), 2.2); }

inline Image gamma_encode(Image img) {
  for (auto& v : img.data()) v = srgb_gamma_encode(v);
  return img;
}
inline Image gamma_decode(Image img) {
  for (auto& v : img.data()) v = srgb_gamma_decode(v);
  return img;
}

// Rounds every value to the nearest representable level of a `bits`-bit
// integer encoding, which is what a PNG round trip does.
inline Image quantize(Image img, int bits) {
  const double levels = static_cast<double>((1u << bits) - 1u);
  for (auto& v : img.data()) v = std::round(std::clamp(v, 0.0, 1.0) * levels) / levels;
  return img;
}

inline Image to_rgb(const Image& img) {
  if (img.channels() == 3) return img;
  Image out(img.width(), img.height(), 3);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x, std::min(c, img.channels() - 1));
  return out;
}

}  // namespace matpal
