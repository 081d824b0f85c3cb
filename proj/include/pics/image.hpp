#pragma once

#include "pics/tensor.hpp"

#include <Eigen/Core>

#include <vector>

namespace pics {

/// Row-major 2-D scalar grid; rows are image rows (y), cols are x.
using Grid = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Planar multi-channel image, one Grid per channel.
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return static_cast<int>(planes_.size()); }
  bool empty() const { return planes_.empty(); }

  Grid& channel(int c) { return planes_.at(static_cast<std::size_t>(c)); }
  const Grid& channel(int c) const { return planes_.at(static_cast<std::size_t>(c)); }
  double& at(int c, int y, int x) { return planes_[static_cast<std::size_t>(c)](y, x); }
  double at(int c, int y, int x) const { return planes_[static_cast<std::size_t>(c)](y, x); }

  /// Pixel-major layout: row y*width + x, one column per channel.
  Matrix to_tokens() const;
  static Image from_tokens(const Matrix& tokens, int width, int height);

  bool operator==(const Image& other) const;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Grid> planes_;
};

/// Bilinear resampling with half-pixel centers and edge clamping (up or down).
Grid resample_bilinear(const Grid& src, int height, int width);
Image resize_bilinear(const Image& img, int width, int height);

/// Bilinear sample at continuous index coordinates (pixel centers on integers);
/// taps outside the grid read as 0.
double sample_bilinear_zero(const Grid& src, double y, double x);

Image map_channels(const Image& img, double scale, double offset);
Image clamp(const Image& img, double lo, double hi);

}  // namespace pics
