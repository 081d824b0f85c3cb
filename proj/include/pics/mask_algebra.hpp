#pragma once

#include "pics/image.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace pics {

/// Half-open integer rectangle [x0, x1) x [y0, y1).
struct BBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 1;
  int y1 = 1;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  std::int64_t area() const { return static_cast<std::int64_t>(width()) * height(); }
  bool valid() const { return x0 >= 0 && y0 >= 0 && x0 < x1 && y0 < y1; }
  bool operator==(const BBox&) const = default;
};

/// Throws std::invalid_argument unless b.valid().
void check_box(const BBox& b);
std::optional<BBox> intersect(const BBox& a, const BBox& b);
std::int64_t intersection_area(const BBox& a, const BBox& b);
double iou(const BBox& a, const BBox& b);

/// Occupancy grid with values in [0, 1]. Binary masks hold exactly 0 or 1.
class Mask {
 public:
  Mask() = default;
  Mask(int width, int height);
  explicit Mask(Grid values);

  int width() const { return static_cast<int>(values_.cols()); }
  int height() const { return static_cast<int>(values_.rows()); }
  const Grid& values() const { return values_; }
  Grid& values() { return values_; }
  double operator()(int y, int x) const { return values_(y, x); }
  double& operator()(int y, int x) { return values_(y, x); }

  bool is_binary() const;
  double area() const { return values_.sum(); }
  bool operator==(const Mask& other) const;

 private:
  Grid values_;
};

/// Tight bounding box of the nonzero cells; nullopt for an empty mask.
std::optional<BBox> mask_bbox(const Mask& m);

struct PairMasks {
  Mask unite;        // a or b
  Mask overlap;      // a and b
  Mask a_exclusive;  // a and not b
  Mask b_exclusive;  // b and not a
};

PairMasks build_pair_masks(const Mask& a, const Mask& b);

/// (1 - m_u) * x per channel.
Image masked_background(const Image& x, const Mask& unite);

Mask bbox_to_mask(const BBox& b, int width, int height);

/// Bilinear downsampling, half-pixel centers, edge clamping. Upsampling is
/// rejected; equal dimensions return the input unchanged.
Mask downsample_mask(const Mask& m, int height, int width);

/// Feature-resolution partition of unity: bg + sum(exclusive) + overlap = 1.
struct RoutingMasks {
  Mask background;
  std::vector<Mask> exclusive;
  Mask overlap;

  int object_count() const { return static_cast<int>(exclusive.size()); }
  int width() const { return background.width(); }
  int height() const { return background.height(); }
};

/// Builds the partition in image space (covered by none / exactly one / two or
/// more objects) and downsamples each component independently. Needs M >= 2.
RoutingMasks build_routing_masks(std::span<const Mask> masks, int height, int width);

/// Single-object routing (background + one exclusive region, empty overlap),
/// used by the one-object-per-turn sequential protocol.
RoutingMasks build_single_routing(const Mask& mask, int height, int width);

/// Largest elementwise deviation of bg + sum(ex) + overlap from 1.
double partition_error(const RoutingMasks& r);

}  // namespace pics
