#include "pics/mask_algebra.hpp"

#include "pics/error.hpp"

#include <algorithm>
#include <cmath>

namespace pics {

void check_box(const BBox& b) {
  if (!b.valid()) {
    throw std::invalid_argument("invalid box [" + std::to_string(b.x0) + "," + std::to_string(b.y0) + "," +
                                std::to_string(b.x1) + "," + std::to_string(b.y1) + "]");
  }
}

std::optional<BBox> intersect(const BBox& a, const BBox& b) {
  BBox r{std::max(a.x0, b.x0), std::max(a.y0, b.y0), std::min(a.x1, b.x1), std::min(a.y1, b.y1)};
  if (r.x0 >= r.x1 || r.y0 >= r.y1) return std::nullopt;
  return r;
}

std::int64_t intersection_area(const BBox& a, const BBox& b) {
  const auto r = intersect(a, b);
  return r ? r->area() : 0;
}

double iou(const BBox& a, const BBox& b) {
  check_box(a);
  check_box(b);
  const std::int64_t inter = intersection_area(a, b);
  if (inter == 0) return 0.0;
  return static_cast<double>(inter) / static_cast<double>(a.area() + b.area() - inter);
}

Mask::Mask(int width, int height) {
  if (width <= 0 || height <= 0) throw ShapeError("mask dimensions must be positive");
  values_ = Grid::Zero(height, width);
}

Mask::Mask(Grid values) : values_(std::move(values)) {
  if (values_.rows() <= 0 || values_.cols() <= 0) throw ShapeError("mask dimensions must be positive");
}

bool Mask::is_binary() const {
  return ((values_ == 0.0) || (values_ == 1.0)).all();
}

bool Mask::operator==(const Mask& other) const {
  return values_.rows() == other.values_.rows() && values_.cols() == other.values_.cols() &&
         (values_ == other.values_).all();
}

std::optional<BBox> mask_bbox(const Mask& m) {
  BBox b{m.width(), m.height(), -1, -1};
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (m(y, x) == 0.0) continue;
      b.x0 = std::min(b.x0, x);
      b.y0 = std::min(b.y0, y);
      b.x1 = std::max(b.x1, x + 1);
      b.y1 = std::max(b.y1, y + 1);
    }
  }
  if (b.x1 < 0) return std::nullopt;
  return b;
}

namespace {

void require_same_dims(const Mask& a, const Mask& b, const char* op) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw ShapeError(std::string(op) + ": mask dimensions differ (" + std::to_string(a.width()) + "x" +
                     std::to_string(a.height()) + " vs " + std::to_string(b.width()) + "x" +
                     std::to_string(b.height()) + ")");
  }
}

void require_binary(const Mask& m, const char* op) {
  if (!m.is_binary()) throw std::invalid_argument(std::string(op) + ": mask is not binary");
}

}  // namespace

PairMasks build_pair_masks(const Mask& a, const Mask& b) {
  require_same_dims(a, b, "build_pair_masks");
  require_binary(a, "build_pair_masks");
  require_binary(b, "build_pair_masks");
  const Grid& va = a.values();
  const Grid& vb = b.values();
  return PairMasks{
      Mask(va.max(vb)),
      Mask(va * vb),
      Mask(va * (1.0 - vb)),
      Mask(vb * (1.0 - va)),
  };
}

Image masked_background(const Image& x, const Mask& unite) {
  if (x.width() != unite.width() || x.height() != unite.height()) {
    throw ShapeError("masked_background: image and mask dimensions differ");
  }
  Image out = x;
  const Grid keep = 1.0 - unite.values();
  for (int c = 0; c < out.channels(); ++c) out.channel(c) *= keep;
  return out;
}

Mask bbox_to_mask(const BBox& b, int width, int height) {
  check_box(b);
  if (b.x1 > width || b.y1 > height) throw std::invalid_argument("bbox_to_mask: box exceeds the grid");
  Mask m(width, height);
  m.values().block(b.y0, b.x0, b.height(), b.width()) = 1.0;
  return m;
}

Mask downsample_mask(const Mask& m, int height, int width) {
  if (height <= 0 || width <= 0) throw std::invalid_argument("downsample_mask: target dimensions must be positive");
  if (height > m.height() || width > m.width()) {
    throw std::invalid_argument("downsample_mask: upsampling is not supported");
  }
  Grid g = resample_bilinear(m.values(), height, width);
  return Mask(g.max(0.0).min(1.0));
}

RoutingMasks build_routing_masks(std::span<const Mask> masks, int height, int width) {
  if (masks.size() < 2) throw std::invalid_argument("build_routing_masks: need at least two object masks");
  const Mask& first = masks.front();
  Grid count = Grid::Zero(first.height(), first.width());
  for (const Mask& m : masks) {
    require_same_dims(first, m, "build_routing_masks");
    require_binary(m, "build_routing_masks");
    count += m.values();
  }
  RoutingMasks r;
  r.background = downsample_mask(Mask((count == 0.0).cast<double>()), height, width);
  for (const Mask& m : masks) {
    r.exclusive.push_back(downsample_mask(Mask(m.values() * (count == 1.0).cast<double>()), height, width));
  }
  r.overlap = downsample_mask(Mask((count >= 2.0).cast<double>()), height, width);
  return r;
}

RoutingMasks build_single_routing(const Mask& mask, int height, int width) {
  require_binary(mask, "build_single_routing");
  RoutingMasks r;
  r.background = downsample_mask(Mask(1.0 - mask.values()), height, width);
  r.exclusive.push_back(downsample_mask(mask, height, width));
  r.overlap = Mask(width, height);
  return r;
}

double partition_error(const RoutingMasks& r) {
  Grid total = r.background.values() + r.overlap.values();
  for (const Mask& m : r.exclusive) {
    if (m.width() != r.width() || m.height() != r.height()) throw ShapeError("routing masks differ in resolution");
    total += m.values();
  }
  return (total - 1.0).abs().maxCoeff();
}

}  // namespace pics
