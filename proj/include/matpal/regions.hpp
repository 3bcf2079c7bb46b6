#pragma once

// Region masks and scale-adaptive square crops.

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "matpal/error.hpp"
#include "matpal/image.hpp"
#include "matpal/rng.hpp"

namespace matpal {

class RegionMask {
 public:
  RegionMask() = default;
  RegionMask(int width, int height, std::string source_image_id = {})
      : w_(width), h_(height), bits_(static_cast<std::size_t>(width) * height, 0),
        source_(std::move(source_image_id)) {}

  // Any value > 0.5 (i.e. > 127 on 8-bit) in the first channel is inside.
  static RegionMask from_image(const Image& img, std::string source_image_id = {}) {
    RegionMask m(img.width(), img.height(), std::move(source_image_id));
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) m.set(x, y, img.at(y, x, 0) > 127.0 / 255.0);
    return m;
  }

  int width() const { return w_; }
  int height() const { return h_; }
  const std::string& source_image_id() const { return source_; }
  bool at(int x, int y) const { return bits_[static_cast<std::size_t>(y) * w_ + x] != 0; }
  void set(int x, int y, bool v = true) { bits_[static_cast<std::size_t>(y) * w_ + x] = v; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1)); }
  bool empty() const { return count() == 0; }

  Image to_image() const {
    Image img(w_, h_, 1);
    for (int y = 0; y < h_; ++y)
      for (int x = 0; x < w_; ++x) img.at(y, x) = at(x, y) ? 1.0 : 0.0;
    return img;
  }

 private:
  int w_ = 0, h_ = 0;
  std::vector<std::uint8_t> bits_;
  std::string source_;
};

inline RegionMask full_mask(int width, int height) {
  RegionMask m(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) m.set(x, y);
  return m;
}

struct CropConfig {
  int c_x = 256;
  int c_in = 256;
  int max_crops = 16;
  double coverage_fraction = 0.95;

  void validate() const {
    require(c_x >= 8, ErrorCode::invalid_argument, "c_x must be >= 8");
    require(c_in >= 64, ErrorCode::invalid_argument, "c_in must be >= 64");
    require(max_crops >= 1, ErrorCode::invalid_argument, "max_crops must be >= 1");
    require(coverage_fraction > 0.0 && coverage_fraction <= 1.0, ErrorCode::invalid_argument,
            "coverage_fraction must lie in (0, 1]");
  }
};

inline int largest_square(const RegionMask& mask) {
  const int w = mask.width(), h = mask.height();
  std::vector<int> prev(w + 1, 0), cur(w + 1, 0);
  int best = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      cur[x + 1] = mask.at(x, y) ? 1 + std::min({prev[x + 1], cur[x], prev[x]}) : 0;
      best = std::max(best, cur[x + 1]);
    }
    std::swap(prev, cur);
  }
  require(best > 0, ErrorCode::empty_region, "region mask is empty");
  return best;
}

// Summed-area table for O(1) window coverage counts.
class MaskIntegral {
 public:
  explicit MaskIntegral(const RegionMask& m)
      : w_(m.width()), table_(static_cast<std::size_t>(m.width() + 1) * (m.height() + 1), 0) {
    for (int y = 0; y < m.height(); ++y)
      for (int x = 0; x < w_; ++x)
        at(x + 1, y + 1) = at(x, y + 1) + at(x + 1, y) - at(x, y) + (m.at(x, y) ? 1 : 0);
  }
  long inside(int x0, int y0, int side) const {
    return at(x0 + side, y0 + side) - at(x0, y0 + side) - at(x0 + side, y0) + at(x0, y0);
  }

 private:
  long& at(int x, int y) { return table_[static_cast<std::size_t>(y) * (w_ + 1) + x]; }
  long at(int x, int y) const { return table_[static_cast<std::size_t>(y) * (w_ + 1) + x]; }
  int w_;
  std::vector<long> table_;
};

struct CropWindow {
  int x = 0, y = 0, side = 0;
  double coverage = 0.0;
};

inline constexpr int kMaxCropProposals = 10000;

// Rejection-samples up to max_crops windows of side min(c_x, largest square).
inline std::vector<CropWindow> sample_crop_windows(const RegionMask& mask, const CropConfig& cfg,
                                                   std::uint64_t seed) {
  cfg.validate();
  const int ls = largest_square(mask);
  require(ls >= 8, ErrorCode::region_too_fragmented,
          "largest inscribed square is " + std::to_string(ls) + " px, need at least 8");
  const int side = std::min(cfg.c_x, ls);
  const MaskIntegral integral(mask);
  const double area = static_cast<double>(side) * side;
  Rng rng(derive_seed(seed, "crops"));
  std::vector<CropWindow> out;
  const int span_x = mask.width() - side + 1, span_y = mask.height() - side + 1;
  for (int i = 0; i < kMaxCropProposals && static_cast<int>(out.size()) < cfg.max_crops; ++i) {
    const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(span_x)));
    const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(span_y)));
    const double cov = static_cast<double>(integral.inside(x, y, side)) / area;
    if (cov >= cfg.coverage_fraction) out.push_back({x, y, side, cov});
  }
  require(!out.empty(), ErrorCode::region_too_fragmented,
          "no crop window reached the coverage threshold after " +
              std::to_string(kMaxCropProposals) + " proposals");
  return out;
}

inline std::vector<Image> sample_crops(const Image& image, const RegionMask& mask,
                                       const CropConfig& cfg, std::uint64_t seed) {
  require(image.width() == mask.width() && image.height() == mask.height(),
          ErrorCode::shape_mismatch, "image and mask extents differ");
  std::vector<Image> crops;
  for (const auto& w : sample_crop_windows(mask, cfg, seed))
    crops.push_back(resize_bilinear(crop(image, w.x, w.y, w.side, w.side), cfg.c_in, cfg.c_in));
  return crops;
}

}  // namespace matpal
