#pragma once

#include "pics/error.hpp"
#include "pics/interaction_block.hpp"
#include "pics/mask_algebra.hpp"
#include "pics/ops.hpp"
#include "pics/tensor.hpp"

#include <cmath>
#include <random>
#include <vector>

namespace pics::testing {

/// Random binary mask: 1-3 rectangles or ellipses, or sparse noise.
inline Mask random_mask(Rng& rng, int width, int height) {
  Mask m(width, height);
  std::uniform_int_distribution<int> style(0, 3);
  if (style(rng) == 0) {
    std::bernoulli_distribution bit(std::uniform_real_distribution<double>(0.05, 0.6)(rng));
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) m(y, x) = bit(rng) ? 1.0 : 0.0;
    }
    return m;
  }
  const int shapes = std::uniform_int_distribution<int>(1, 3)(rng);
  for (int s = 0; s < shapes; ++s) {
    const int x0 = std::uniform_int_distribution<int>(0, width - 1)(rng);
    const int y0 = std::uniform_int_distribution<int>(0, height - 1)(rng);
    const int x1 = std::uniform_int_distribution<int>(x0 + 1, width)(rng);
    const int y1 = std::uniform_int_distribution<int>(y0 + 1, height)(rng);
    const bool ellipse = std::bernoulli_distribution(0.5)(rng);
    const double cx = (x0 + x1) / 2.0;
    const double cy = (y0 + y1) / 2.0;
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        const double u = (x + 0.5 - cx) / ((x1 - x0) / 2.0);
        const double v = (y + 0.5 - cy) / ((y1 - y0) / 2.0);
        if (!ellipse || u * u + v * v <= 1.0) m(y, x) = 1.0;
      }
    }
  }
  return m;
}

/// Two masks guaranteed to share at least one pixel.
inline std::vector<Mask> overlapping_pair(Rng& rng, int width, int height) {
  for (;;) {
    std::vector<Mask> ms{random_mask(rng, width, height), random_mask(rng, width, height)};
    if ((ms[0].values() * ms[1].values()).sum() > 0) return ms;
  }
}

inline Tensor random_code(Rng& rng, Index d) {
  const Index n = std::uniform_int_distribution<Index>(1, 6)(rng);
  return Tensor::randn({n, d}, rng);
}

/// Scalar probe of a tensor-valued output: sum(out .* r).
inline Var project(Var out, const Matrix& r) {
  return sum(mul(out, out.tape().constant(Tensor(out.shape(), r))));
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

inline bool bit_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

}  // namespace pics::testing
