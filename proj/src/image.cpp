#include "pics/image.hpp"

#include "pics/error.hpp"

#include <algorithm>
#include <cmath>

namespace pics {

Image::Image(int width, int height, int channels) : width_(width), height_(height) {
  if (width <= 0 || height <= 0 || channels <= 0) throw ShapeError("image dimensions must be positive");
  planes_.assign(static_cast<std::size_t>(channels), Grid::Zero(height, width));
}

Matrix Image::to_tokens() const {
  Matrix out(static_cast<Index>(width_) * height_, channels());
  for (int c = 0; c < channels(); ++c) {
    out.col(c) = Eigen::Map<const Eigen::VectorXd>(planes_[static_cast<std::size_t>(c)].data(), out.rows());
  }
  return out;
}

Image Image::from_tokens(const Matrix& tokens, int width, int height) {
  if (tokens.rows() != static_cast<Index>(width) * height) throw ShapeError("token count does not match image size");
  Image img(width, height, static_cast<int>(tokens.cols()));
  for (int c = 0; c < img.channels(); ++c) {
    Eigen::Map<Eigen::VectorXd>(img.channel(c).data(), tokens.rows()) = tokens.col(c);
  }
  return img;
}

bool Image::operator==(const Image& other) const {
  if (width_ != other.width_ || height_ != other.height_ || channels() != other.channels()) return false;
  for (int c = 0; c < channels(); ++c) {
    if ((channel(c) != other.channel(c)).any()) return false;
  }
  return true;
}

Grid resample_bilinear(const Grid& src, int height, int width) {
  if (height <= 0 || width <= 0) throw ShapeError("resample: target dimensions must be positive");
  const Index hi = src.rows();
  const Index wi = src.cols();
  if (hi == height && wi == width) return src;
  const double sy = static_cast<double>(hi) / height;
  const double sx = static_cast<double>(wi) / width;
  Grid out(height, width);
  for (int i = 0; i < height; ++i) {
    const double fy = std::clamp((i + 0.5) * sy - 0.5, 0.0, static_cast<double>(hi - 1));
    const Index y0 = static_cast<Index>(std::floor(fy));
    const Index y1 = std::min(y0 + 1, hi - 1);
    const double ty = fy - static_cast<double>(y0);
    for (int j = 0; j < width; ++j) {
      const double fx = std::clamp((j + 0.5) * sx - 0.5, 0.0, static_cast<double>(wi - 1));
      const Index x0 = static_cast<Index>(std::floor(fx));
      const Index x1 = std::min(x0 + 1, wi - 1);
      const double tx = fx - static_cast<double>(x0);
      // Lerp form keeps constant regions exactly constant.
      const double top = src(y0, x0) + tx * (src(y0, x1) - src(y0, x0));
      const double bot = src(y1, x0) + tx * (src(y1, x1) - src(y1, x0));
      out(i, j) = top + ty * (bot - top);
    }
  }
  return out;
}

Image resize_bilinear(const Image& img, int width, int height) {
  Image out(width, height, img.channels());
  for (int c = 0; c < img.channels(); ++c) out.channel(c) = resample_bilinear(img.channel(c), height, width);
  return out;
}

double sample_bilinear_zero(const Grid& src, double y, double x) {
  const double fy = std::floor(y);
  const double fx = std::floor(x);
  const double ty = y - fy;
  const double tx = x - fx;
  auto tap = [&](double yy, double xx) {
    if (yy < 0 || xx < 0 || yy >= static_cast<double>(src.rows()) || xx >= static_cast<double>(src.cols())) return 0.0;
    return src(static_cast<Index>(yy), static_cast<Index>(xx));
  };
  const double top = tap(fy, fx) + tx * (tap(fy, fx + 1) - tap(fy, fx));
  const double bot = tap(fy + 1, fx) + tx * (tap(fy + 1, fx + 1) - tap(fy + 1, fx));
  return top + ty * (bot - top);
}

Image map_channels(const Image& img, double scale, double offset) {
  Image out = img;
  for (int c = 0; c < out.channels(); ++c) out.channel(c) = out.channel(c) * scale + offset;
  return out;
}

Image clamp(const Image& img, double lo, double hi) {
  Image out = img;
  for (int c = 0; c < out.channels(); ++c) out.channel(c) = out.channel(c).max(lo).min(hi);
  return out;
}

}  // namespace pics
