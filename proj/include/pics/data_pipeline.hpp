#pragma once

#include "pics/image.hpp"
#include "pics/io.hpp"
#include "pics/mask_algebra.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace pics {

enum class ShapeKind { rectangle, disk, triangle };

struct Instance {
  BBox box;       // tight box of the amodal mask
  Mask mask;      // amodal (full-extent) mask
  int depth_rank = 0;  // 0 = farthest
  ShapeKind kind = ShapeKind::rectangle;
};

struct SceneRecord {
  Image image;
  std::vector<Instance> instances;
  std::string provenance;
};

/// Throws std::invalid_argument describing the first broken invariant: binary
/// masks inside their boxes, depth ranks a permutation of 0..n-1.
void validate_scene(const SceneRecord& scene);

/// Per-instance visible masks: amodal masks minus everything nearer.
std::vector<Mask> visible_masks(const SceneRecord& scene);

/// Textured background plus `n_objects` solid shapes. Object 1 is centered on
/// a pixel of object 0, so the pair (0, 1) always intersects. Depth follows
/// painter_order of the boxes and nearer shapes overwrite farther ones.
SceneRecord generate_scene(std::uint64_t seed, int width, int height, int n_objects);

/// Bottom edge ascending (farther first), ties by x0, then input index.
std::vector<int> painter_order(std::span<const BBox> boxes);

struct BoxPair {
  int first = -1;
  int second = -1;
  bool operator==(const BoxPair&) const = default;
};

/// Highest-IoU pair. With `literal_guard` lists of length <= 2 are rejected,
/// otherwise only lists shorter than 2. Diagonal is zeroed; ties go to the
/// smallest row-major index. nullopt when the best IoU is <= 0.
std::optional<BoxPair> select_boxes(std::span<const BBox> boxes, bool literal_guard = true);

inline constexpr double kDefaultAreaThreshold = 64.0;

/// Anchor (max sum of IoU with the other kept boxes, ties to lowest index)
/// followed by its M-1 best positive-IoU neighbours (IoU descending, ties by
/// index). Boxes with area below the threshold are dropped first.
std::optional<std::vector<int>> select_multi(std::span<const BBox> boxes, int m,
                                             double area_threshold = kDefaultAreaThreshold);

/// Per-cell frequency with which the intersection covers the cell, after
/// mapping the first box of each pair onto the unit square. Cells are
/// rasterized by their centers against half-open intervals.
Grid overlap_heatmap(std::span<const std::pair<BBox, BBox>> pairs, int grid_n = 64);

struct HeatmapStats {
  double central_mean = 0;  // centered square holding ~`central_fraction` of the cells
  double border_mean = 0;   // outermost ring of cells
};

HeatmapStats heatmap_stats(const Grid& heat, double central_fraction = 0.2);

/// (box 0, box 1) of `count` generated two-object scenes, scene i from seed + i.
std::vector<std::pair<BBox, BBox>> scene_box_pairs(int count, std::uint64_t seed, int width, int height);

struct TrainSample {
  Image background;              // target with the union of amodal masks erased
  std::vector<Image> crops;      // box-sized crops, zero outside the visible mask
  std::vector<Mask> masks;       // amodal masks, full frame
  std::vector<Mask> visible;     // visible masks, full frame
  std::vector<BBox> boxes;
  Image target;
};

TrainSample decompose(const SceneRecord& scene, BoxPair pair);

/// Pastes each crop's visible pixels over the background in `order`.
Image recompose(const TrainSample& sample, std::span<const int> order);

/// image.ppm, instances.json and one mask_<i>.pgm per instance.
void save_scene(const fs::path& dir, const SceneRecord& scene);
SceneRecord load_scene(const fs::path& dir);

}  // namespace pics
