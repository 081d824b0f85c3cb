#include "pics/metrics.hpp"

#include "pics/error.hpp"

#include <cmath>

namespace pics {

namespace {

void check_pair(const Image& a, const Image& b) {
  if (a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels()) {
    throw ShapeError("metric: image shapes differ");
  }
}

void check_region(const Image& a, const Mask& region) {
  if (region.width() != a.width() || region.height() != a.height()) throw ShapeError("metric: region size differs");
  if (region.area() <= 0) throw std::invalid_argument("metric: empty region");
}

double psnr_from_mse(double mse, double max_value) {
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_value * max_value / mse));
}

Grid gaussian_filter(const Grid& g) {
  constexpr int kRadius = 5;
  constexpr double kSigma = 1.5;
  double w[2 * kRadius + 1];
  for (int k = -kRadius; k <= kRadius; ++k) w[k + kRadius] = std::exp(-(k * k) / (2 * kSigma * kSigma));
  const Index h = g.rows();
  const Index wd = g.cols();
  auto pass = [&](const Grid& src, bool horizontal) {
    Grid out(h, wd);
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < wd; ++x) {
        double acc = 0;
        double norm = 0;
        for (int k = -kRadius; k <= kRadius; ++k) {
          const Index yy = horizontal ? y : y + k;
          const Index xx = horizontal ? x + k : x;
          if (yy < 0 || xx < 0 || yy >= h || xx >= wd) continue;
          acc += w[k + kRadius] * src(yy, xx);
          norm += w[k + kRadius];
        }
        out(y, x) = acc / norm;
      }
    }
    return out;
  };
  return pass(pass(g, true), false);
}

}  // namespace

double psnr(const Image& a, const Image& b, double max_value) {
  check_pair(a, b);
  double se = 0;
  for (int c = 0; c < a.channels(); ++c) se += (a.channel(c) - b.channel(c)).square().sum();
  return psnr_from_mse(se / (static_cast<double>(a.width()) * a.height() * a.channels()), max_value);
}

double psnr(const Image& a, const Image& b, const Mask& region, double max_value) {
  check_pair(a, b);
  check_region(a, region);
  double se = 0;
  for (int c = 0; c < a.channels(); ++c) se += ((a.channel(c) - b.channel(c)).square() * region.values()).sum();
  return psnr_from_mse(se / (region.area() * a.channels()), max_value);
}

Grid ssim_map(const Image& a, const Image& b, double max_value) {
  check_pair(a, b);
  const double c1 = (0.01 * max_value) * (0.01 * max_value);
  const double c2 = (0.03 * max_value) * (0.03 * max_value);
  Grid total = Grid::Zero(a.height(), a.width());
  for (int c = 0; c < a.channels(); ++c) {
    const Grid& x = a.channel(c);
    const Grid& y = b.channel(c);
    const Grid mx = gaussian_filter(x);
    const Grid my = gaussian_filter(y);
    const Grid sxx = gaussian_filter(x * x) - mx * mx;
    const Grid syy = gaussian_filter(y * y) - my * my;
    const Grid sxy = gaussian_filter(x * y) - mx * my;
    total += ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
  }
  return total / a.channels();
}

double ssim(const Image& a, const Image& b, double max_value) {
  return ssim_map(a, b, max_value).mean();
}

double ssim(const Image& a, const Image& b, const Mask& region, double max_value) {
  check_region(a, region);
  return (ssim_map(a, b, max_value) * region.values()).sum() / region.area();
}

}  // namespace pics
