#include "pics/shape_prior.hpp"

#include "pics/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace pics {

namespace {

void check_patch(int width, int height, int patch) {
  if (patch <= 0 || width % patch || height % patch) {
    throw ShapeError("image " + std::to_string(width) + "x" + std::to_string(height) + " not divisible by patch " +
                     std::to_string(patch));
  }
}

// Inverse-maps every output pixel center through `to_source` (center-relative
// coordinates) and samples the input.
template <typename Map>
Grid warp(const Grid& src, Map to_source) {
  const Index h = src.rows();
  const Index w = src.cols();
  const double cy = static_cast<double>(h) / 2.0;
  const double cx = static_cast<double>(w) / 2.0;
  Grid out(h, w);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const auto [sy, sx] = to_source(static_cast<double>(y) + 0.5 - cy, static_cast<double>(x) + 0.5 - cx);
      out(y, x) = sample_bilinear_zero(src, sy + cy - 0.5, sx + cx - 0.5);
    }
  }
  return out;
}

}  // namespace

Matrix patchify(const Matrix& pixel_tokens, int width, int height, int patch) {
  check_patch(width, height, patch);
  if (pixel_tokens.rows() != static_cast<Index>(width) * height) throw ShapeError("patchify: token count mismatch");
  const Index c = pixel_tokens.cols();
  const int gw = width / patch;
  const int gh = height / patch;
  Matrix out(static_cast<Index>(gw) * gh, static_cast<Index>(patch) * patch * c);
  for (int ty = 0; ty < gh; ++ty) {
    for (int tx = 0; tx < gw; ++tx) {
      const Index row = static_cast<Index>(ty) * gw + tx;
      for (int dy = 0; dy < patch; ++dy) {
        for (int dx = 0; dx < patch; ++dx) {
          const Index src = static_cast<Index>(ty * patch + dy) * width + tx * patch + dx;
          out.block(row, (static_cast<Index>(dy) * patch + dx) * c, 1, c) = pixel_tokens.row(src);
        }
      }
    }
  }
  return out;
}

Matrix patchify(const Image& img, int patch) {
  return patchify(img.to_tokens(), img.width(), img.height(), patch);
}

Matrix unpatchify(const Matrix& patches, int width, int height, int channels, int patch) {
  check_patch(width, height, patch);
  const int gw = width / patch;
  const int gh = height / patch;
  if (patches.rows() != static_cast<Index>(gw) * gh || patches.cols() != static_cast<Index>(patch) * patch * channels) {
    throw ShapeError("unpatchify: patch matrix shape mismatch");
  }
  Matrix out(static_cast<Index>(width) * height, channels);
  for (int ty = 0; ty < gh; ++ty) {
    for (int tx = 0; tx < gw; ++tx) {
      const Index row = static_cast<Index>(ty) * gw + tx;
      for (int dy = 0; dy < patch; ++dy) {
        for (int dx = 0; dx < patch; ++dx) {
          const Index dst = static_cast<Index>(ty * patch + dy) * width + tx * patch + dx;
          out.row(dst) = patches.block(row, (static_cast<Index>(dy) * patch + dx) * channels, 1, channels);
        }
      }
    }
  }
  return out;
}

PatchEncoder PatchEncoder::init(int channels, int patch, Index d, Rng& rng) {
  if (channels <= 0 || patch <= 0) throw std::invalid_argument("PatchEncoder: channels and patch must be positive");
  PatchEncoder e;
  e.proj = LinearParams::init(static_cast<Index>(patch) * patch * channels, d, rng);
  e.patch = patch;
  e.channels = channels;
  return e;
}

Var encode_object(Binder& bind, const PatchEncoder& enc, const Image& x) {
  if (x.channels() != enc.channels) {
    throw ShapeError("encode_object: " + std::to_string(x.channels()) + " channels, encoder expects " +
                     std::to_string(enc.channels));
  }
  Var patches = bind.tape().constant(Tensor::from_matrix(patchify(x, enc.patch)));
  return linear(bind, enc.proj, patches);
}

ViewSet synth_multiview(const Image& x, int k, std::uint64_t seed) {
  if (k < 1) throw std::invalid_argument("synth_multiview: K must be >= 1");
  ViewSet vs;
  vs.views.push_back(x);
  Rng rng(seed);
  std::uniform_real_distribution<double> scale_dist(0.8, 1.2);
  std::uniform_real_distribution<double> shear_dist(-0.2, 0.2);
  for (int v = 1; v < k; ++v) {
    const double sy = scale_dist(rng);
    const double sx = scale_dist(rng);
    const double shear = shear_dist(rng);
    // Forward map A = [[sx, shear], [0, sy]] in (x, y); sample through A^-1.
    auto inverse = [=](double y, double xx) {
      const double src_y = y / sy;
      const double src_x = (xx - shear * src_y) / sx;
      return std::pair{src_y, src_x};
    };
    Image view(x.width(), x.height(), x.channels());
    for (int c = 0; c < x.channels(); ++c) view.channel(c) = warp(x.channel(c), inverse);
    vs.views.push_back(std::move(view));
  }
  return vs;
}

FusionParams FusionParams::init(Index d, Rng& rng) {
  return FusionParams{LayerNormParams::identity(d), LinearParams::init(d, 2 * d, rng), LinearParams::init(2 * d, d, rng)};
}

std::vector<int> random_permutation(int n, Rng& rng) {
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  // Fisher-Yates with explicit draws; std::shuffle is implementation-defined.
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng() % static_cast<std::uint64_t>(i + 1));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  return perm;
}

Var concat_views(std::span<const Var> codes, std::span<const int> perm) {
  if (codes.empty()) throw std::invalid_argument("concat_views: no views");
  if (perm.size() != codes.size()) throw std::invalid_argument("concat_views: permutation size mismatch");
  std::vector<bool> seen(codes.size(), false);
  std::vector<Var> ordered;
  for (int i : perm) {
    if (i < 0 || static_cast<std::size_t>(i) >= codes.size() || seen[static_cast<std::size_t>(i)]) {
      throw std::invalid_argument("concat_views: not a permutation");
    }
    seen[static_cast<std::size_t>(i)] = true;
    const Var& c = codes[static_cast<std::size_t>(i)];
    if (c.rows() != codes[0].rows() || c.cols() != codes[0].cols()) throw ShapeError("concat_views: ragged view shapes");
    ordered.push_back(c);
  }
  return concat_rows(ordered);
}

Var fuse_multiview(Binder& bind, const FusionParams& p, std::span<const Var> codes, std::span<const int> perm) {
  Var cat = concat_views(codes, perm);
  return linear(bind, p.fc2, gelu(linear(bind, p.fc1, layer_norm(bind, p.norm, cat))));
}

std::pair<Image, Mask> rotate_augment(const Image& x, const Mask& m, double theta) {
  if (m.width() != x.width() || m.height() != x.height()) throw ShapeError("rotate_augment: mask/image size mismatch");
  if (theta == 0.0) return {x, m};
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  auto inverse = [=](double y, double xx) { return std::pair{-s * xx + c * y, c * xx + s * y}; };
  Image out(x.width(), x.height(), x.channels());
  for (int ch = 0; ch < x.channels(); ++ch) out.channel(ch) = warp(x.channel(ch), inverse);

  Mask mask(x.width(), x.height());
  const double cy = x.height() / 2.0;
  const double cx = x.width() / 2.0;
  for (int y = 0; y < x.height(); ++y) {
    for (int xx = 0; xx < x.width(); ++xx) {
      const auto [sy, sx] = inverse(y + 0.5 - cy, xx + 0.5 - cx);
      const double fy = std::floor(sy + cy);
      const double fx = std::floor(sx + cx);
      double v = 0.0;
      if (fy >= 0 && fx >= 0 && fy < x.height() && fx < x.width()) v = m(static_cast<int>(fy), static_cast<int>(fx));
      mask(y, xx) = v >= 0.5 ? 1.0 : 0.0;
    }
  }
  return {std::move(out), std::move(mask)};
}

double sample_rotation(Rng& rng) {
  std::uniform_real_distribution<double> dist(-std::numbers::pi / 6.0, std::numbers::pi / 6.0);
  return dist(rng);
}

}  // namespace pics
