#include "pics/data_pipeline.hpp"

#include "pics/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

namespace pics {

namespace {

using Color = std::array<double, 3>;

Mask rasterize(ShapeKind kind, const BBox& b, int width, int height) {
  Mask m(width, height);
  const double cx = (b.x0 + b.x1) / 2.0;
  const double cy = (b.y0 + b.y1) / 2.0;
  const double rx = b.width() / 2.0;
  const double ry = b.height() / 2.0;
  for (int y = std::max(b.y0, 0); y < std::min(b.y1, height); ++y) {
    for (int x = std::max(b.x0, 0); x < std::min(b.x1, width); ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      bool inside = true;
      if (kind == ShapeKind::disk) {
        const double u = (px - cx) / rx;
        const double v = (py - cy) / ry;
        inside = u * u + v * v <= 1.0;
      } else if (kind == ShapeKind::triangle) {
        inside = std::abs(px - cx) <= rx * (py - b.y0) / b.height();
      }
      if (inside) m(y, x) = 1.0;
    }
  }
  return m;
}

Color object_color(Rng& rng) {
  std::uniform_real_distribution<double> low(0.05, 0.25);
  std::uniform_real_distribution<double> high(0.75, 0.95);
  for (;;) {
    const auto bits = rng() & 7u;
    if (bits == 0 || bits == 7) continue;  // skip near-grey black and white
    Color c{};
    for (int k = 0; k < 3; ++k) c[static_cast<std::size_t>(k)] = ((bits >> k) & 1u) ? high(rng) : low(rng);
    return c;
  }
}

double color_distance(const Color& a, const Color& b) {
  return std::abs(a[0] - b[0]) + std::abs(a[1] - b[1]) + std::abs(a[2] - b[2]);
}

Image textured_background(Rng& rng, int width, int height) {
  std::uniform_real_distribution<double> base(0.3, 0.6);
  std::uniform_real_distribution<double> slope(-0.15, 0.15);
  std::uniform_real_distribution<double> freq(0.2, 0.7);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  Image img(width, height, 3);
  for (int c = 0; c < 3; ++c) {
    const double b0 = base(rng);
    const double gx = slope(rng);
    const double gy = slope(rng);
    const double fx = freq(rng);
    const double fy = freq(rng);
    const double ph = phase(rng);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double u = static_cast<double>(x) / width;
        const double v = static_cast<double>(y) / height;
        img.at(c, y, x) = b0 + gx * (u - 0.5) + gy * (v - 0.5) + 0.06 * std::sin(fx * x + fy * y + ph);
      }
    }
  }
  return img;
}

struct Placed {
  ShapeKind kind;
  Mask mask;
  Color color;
};

}  // namespace

void validate_scene(const SceneRecord& scene) {
  const auto n = scene.instances.size();
  std::vector<bool> seen(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const Instance& inst = scene.instances[i];
    const std::string tag = "instance " + std::to_string(i);
    if (inst.mask.width() != scene.image.width() || inst.mask.height() != scene.image.height()) {
      throw std::invalid_argument(tag + ": mask size differs from image");
    }
    if (!inst.mask.is_binary()) throw std::invalid_argument(tag + ": mask is not binary");
    const auto tight = mask_bbox(inst.mask);
    if (!tight) throw std::invalid_argument(tag + ": empty mask");
    if (tight->x0 < inst.box.x0 || tight->y0 < inst.box.y0 || tight->x1 > inst.box.x1 || tight->y1 > inst.box.y1) {
      throw std::invalid_argument(tag + ": mask extends outside its box");
    }
    if (inst.depth_rank < 0 || static_cast<std::size_t>(inst.depth_rank) >= n || seen[static_cast<std::size_t>(inst.depth_rank)]) {
      throw std::invalid_argument(tag + ": depth ranks are not a permutation");
    }
    seen[static_cast<std::size_t>(inst.depth_rank)] = true;
  }
}

std::vector<Mask> visible_masks(const SceneRecord& scene) {
  std::vector<Mask> out;
  for (const Instance& inst : scene.instances) {
    Grid v = inst.mask.values();
    for (const Instance& other : scene.instances) {
      if (other.depth_rank > inst.depth_rank) v *= 1.0 - other.mask.values();
    }
    out.emplace_back(std::move(v));
  }
  return out;
}

std::vector<int> painter_order(std::span<const BBox> boxes) {
  if (boxes.empty()) throw std::invalid_argument("painter_order: empty box list");
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const BBox& ba = boxes[static_cast<std::size_t>(a)];
    const BBox& bb = boxes[static_cast<std::size_t>(b)];
    if (ba.y1 != bb.y1) return ba.y1 < bb.y1;
    return ba.x0 < bb.x0;
  });
  return order;
}

SceneRecord generate_scene(std::uint64_t seed, int width, int height, int n_objects) {
  if (n_objects < 2) throw std::invalid_argument("generate_scene: n_objects must be >= 2");
  const int lo_w = std::max(2, static_cast<int>(std::lround(0.3 * width)));
  const int hi_w = std::max(lo_w, static_cast<int>(std::lround(0.55 * width)));
  const int lo_h = std::max(2, static_cast<int>(std::lround(0.3 * height)));
  const int hi_h = std::max(lo_h, static_cast<int>(std::lround(0.55 * height)));
  if (hi_w > width || hi_h > height) throw std::invalid_argument("generate_scene: canvas too small for shapes");

  Rng rng(seed);
  SceneRecord scene;
  scene.provenance = "synthetic:seed=" + std::to_string(seed);
  Image image = textured_background(rng, width, height);

  std::uniform_int_distribution<int> wdist(lo_w, hi_w);
  std::uniform_int_distribution<int> hdist(lo_h, hi_h);
  std::uniform_int_distribution<int> kind_dist(0, 2);
  auto random_box = [&](int w, int h) {
    const int x0 = std::uniform_int_distribution<int>(0, width - w)(rng);
    const int y0 = std::uniform_int_distribution<int>(0, height - h)(rng);
    return BBox{x0, y0, x0 + w, y0 + h};
  };
  auto pick_color = [&](const std::vector<Placed>& placed) {
    for (int tries = 0;; ++tries) {
      Color c = object_color(rng);
      bool distinct = true;
      for (const Placed& p : placed) distinct = distinct && color_distance(c, p.color) >= 0.9;
      if (distinct || tries > 64) return c;
    }
  };

  std::vector<Placed> placed;
  for (int attempt = 0; placed.size() < 2; ++attempt) {
    if (attempt > 1000) throw std::runtime_error("generate_scene: could not place an intersecting pair");
    placed.clear();
    const auto k0 = static_cast<ShapeKind>(kind_dist(rng));
    Mask m0 = rasterize(k0, random_box(wdist(rng), hdist(rng)), width, height);
    if (m0.area() == 0) continue;
    std::vector<std::pair<int, int>> cells;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        if (m0(y, x) > 0) cells.emplace_back(y, x);
      }
    }
    const auto [cy, cx] = cells[std::uniform_int_distribution<std::size_t>(0, cells.size() - 1)(rng)];
    const int w1 = wdist(rng);
    const int h1 = hdist(rng);
    const int x0 = std::clamp(cx - w1 / 2, 0, width - w1);
    const int y0 = std::clamp(cy - h1 / 2, 0, height - h1);
    const auto k1 = static_cast<ShapeKind>(kind_dist(rng));
    Mask m1 = rasterize(k1, BBox{x0, y0, x0 + w1, y0 + h1}, width, height);
    if ((m0.values() * m1.values()).sum() < 4.0) continue;
    placed.push_back({k0, std::move(m0), pick_color(placed)});
    placed.push_back({k1, std::move(m1), pick_color(placed)});
  }
  while (static_cast<int>(placed.size()) < n_objects) {
    const auto k = static_cast<ShapeKind>(kind_dist(rng));
    Mask m = rasterize(k, random_box(wdist(rng), hdist(rng)), width, height);
    if (m.area() == 0) continue;
    placed.push_back({k, std::move(m), pick_color(placed)});
  }

  std::vector<BBox> boxes;
  for (const Placed& p : placed) boxes.push_back(*mask_bbox(p.mask));
  const std::vector<int> order = painter_order(boxes);
  scene.instances.resize(placed.size());
  for (std::size_t i = 0; i < placed.size(); ++i) {
    scene.instances[i] = Instance{boxes[i], placed[i].mask, 0, placed[i].kind};
  }
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto idx = static_cast<std::size_t>(order[r]);
    scene.instances[idx].depth_rank = static_cast<int>(r);
    const Placed& p = placed[idx];
    for (int c = 0; c < 3; ++c) {
      Grid& plane = image.channel(c);
      plane = p.mask.values() * p.color[static_cast<std::size_t>(c)] + (1.0 - p.mask.values()) * plane;
    }
  }
  scene.image = std::move(image);
  return scene;
}

std::optional<BoxPair> select_boxes(std::span<const BBox> boxes, bool literal_guard) {
  const std::size_t n = boxes.size();
  if (literal_guard ? n <= 2 : n < 2) return std::nullopt;
  for (const BBox& b : boxes) check_box(b);
  double best = 0.0;
  BoxPair pick;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = i == j ? 0.0 : iou(boxes[i], boxes[j]);
      if (v > best) {
        best = v;
        pick = {static_cast<int>(i), static_cast<int>(j)};
      }
    }
  }
  if (best <= 0.0) return std::nullopt;
  return pick;
}

std::optional<std::vector<int>> select_multi(std::span<const BBox> boxes, int m, double area_threshold) {
  if (m < 3) throw std::invalid_argument("select_multi: M must be >= 3");
  std::vector<int> kept;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    check_box(boxes[i]);
    if (static_cast<double>(boxes[i].area()) >= area_threshold) kept.push_back(static_cast<int>(i));
  }
  if (static_cast<int>(kept.size()) < m) return std::nullopt;

  int anchor = -1;
  double best = -1.0;
  for (int i : kept) {
    double score = 0.0;
    for (int j : kept) {
      if (j != i) score += iou(boxes[static_cast<std::size_t>(i)], boxes[static_cast<std::size_t>(j)]);
    }
    if (score > best) {
      best = score;
      anchor = i;
    }
  }
  std::vector<std::pair<double, int>> neighbours;
  for (int j : kept) {
    if (j == anchor) continue;
    const double v = iou(boxes[static_cast<std::size_t>(anchor)], boxes[static_cast<std::size_t>(j)]);
    if (v > 0.0) neighbours.emplace_back(v, j);
  }
  if (static_cast<int>(neighbours.size()) < m - 1) return std::nullopt;
  std::sort(neighbours.begin(), neighbours.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<int> out{anchor};
  for (int k = 0; k < m - 1; ++k) out.push_back(neighbours[static_cast<std::size_t>(k)].second);
  return out;
}

Grid overlap_heatmap(std::span<const std::pair<BBox, BBox>> pairs, int grid_n) {
  if (grid_n <= 0) throw std::invalid_argument("overlap_heatmap: grid size must be positive");
  Grid acc = Grid::Zero(grid_n, grid_n);
  if (pairs.empty()) return acc;
  for (const auto& [a, b] : pairs) {
    check_box(a);
    check_box(b);
    if (intersection_area(a, b) <= 0) throw std::invalid_argument("overlap_heatmap: pair does not intersect");
    const double u0 = std::max(0.0, static_cast<double>(b.x0 - a.x0) / a.width());
    const double u1 = std::min(1.0, static_cast<double>(b.x1 - a.x0) / a.width());
    const double v0 = std::max(0.0, static_cast<double>(b.y0 - a.y0) / a.height());
    const double v1 = std::min(1.0, static_cast<double>(b.y1 - a.y0) / a.height());
    for (int i = 0; i < grid_n; ++i) {
      const double cy = (i + 0.5) / grid_n;
      if (cy < v0 || cy >= v1) continue;
      for (int j = 0; j < grid_n; ++j) {
        const double cx = (j + 0.5) / grid_n;
        if (cx >= u0 && cx < u1) acc(i, j) += 1.0;
      }
    }
  }
  return acc / static_cast<double>(pairs.size());
}

HeatmapStats heatmap_stats(const Grid& heat, double central_fraction) {
  const Index n = heat.rows();
  if (n < 3 || heat.cols() != n) throw std::invalid_argument("heatmap_stats: need a square grid of side >= 3");
  if (!(central_fraction > 0 && central_fraction < 1)) throw std::invalid_argument("heatmap_stats: fraction in (0, 1)");
  const Index margin = static_cast<Index>(std::lround((n - n * std::sqrt(central_fraction)) / 2.0));
  const Index side = n - 2 * margin;
  HeatmapStats st;
  st.central_mean = heat.block(margin, margin, side, side).mean();
  const double ring = heat.sum() - heat.block(1, 1, n - 2, n - 2).sum();
  st.border_mean = ring / static_cast<double>(4 * n - 4);
  return st;
}

std::vector<std::pair<BBox, BBox>> scene_box_pairs(int count, std::uint64_t seed, int width, int height) {
  std::vector<std::pair<BBox, BBox>> pairs;
  pairs.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    const SceneRecord s = generate_scene(seed + static_cast<std::uint64_t>(i), width, height, 2);
    pairs.emplace_back(s.instances[0].box, s.instances[1].box);
  }
  return pairs;
}

TrainSample decompose(const SceneRecord& scene, BoxPair pair) {
  const int n = static_cast<int>(scene.instances.size());
  if (pair.first < 0 || pair.second < 0 || pair.first >= n || pair.second >= n || pair.first == pair.second) {
    throw std::invalid_argument("decompose: invalid instance pair");
  }
  const Instance& a = scene.instances[static_cast<std::size_t>(pair.first)];
  const Instance& b = scene.instances[static_cast<std::size_t>(pair.second)];
  if (intersection_area(a.box, b.box) <= 0) throw std::invalid_argument("decompose: pair boxes do not intersect");

  const std::vector<Mask> vis = visible_masks(scene);
  TrainSample s;
  s.target = scene.image;
  const Mask unite(a.mask.values().max(b.mask.values()));
  s.background = masked_background(scene.image, unite);
  for (int idx : {pair.first, pair.second}) {
    const Instance& inst = scene.instances[static_cast<std::size_t>(idx)];
    const Mask& v = vis[static_cast<std::size_t>(idx)];
    const BBox& box = inst.box;
    Image crop(box.width(), box.height(), scene.image.channels());
    for (int c = 0; c < crop.channels(); ++c) {
      crop.channel(c) = scene.image.channel(c).block(box.y0, box.x0, box.height(), box.width()) *
                        v.values().block(box.y0, box.x0, box.height(), box.width());
    }
    s.crops.push_back(std::move(crop));
    s.masks.push_back(inst.mask);
    s.visible.push_back(v);
    s.boxes.push_back(box);
  }
  return s;
}

Image recompose(const TrainSample& sample, std::span<const int> order) {
  Image out = sample.background;
  for (int k : order) {
    const auto idx = static_cast<std::size_t>(k);
    const BBox& box = sample.boxes.at(idx);
    const Image& crop = sample.crops.at(idx);
    const Mask& vis = sample.visible.at(idx);
    for (int y = 0; y < box.height(); ++y) {
      for (int x = 0; x < box.width(); ++x) {
        if (vis(box.y0 + y, box.x0 + x) < 0.5) continue;
        for (int c = 0; c < out.channels(); ++c) out.at(c, box.y0 + y, box.x0 + x) = crop.at(c, y, x);
      }
    }
  }
  return out;
}

namespace {

const char* kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::disk: return "disk";
    case ShapeKind::triangle: return "triangle";
    default: return "rectangle";
  }
}

ShapeKind kind_from(const std::string& s) {
  if (s == "disk") return ShapeKind::disk;
  if (s == "triangle") return ShapeKind::triangle;
  if (s == "rectangle") return ShapeKind::rectangle;
  throw FormatError("unknown shape kind '" + s + "'");
}

}  // namespace

void save_scene(const fs::path& dir, const SceneRecord& scene) {
  fs::create_directories(dir);
  write_ppm(dir / "image.ppm", scene.image);
  json instances = json::array();
  for (std::size_t i = 0; i < scene.instances.size(); ++i) {
    const Instance& inst = scene.instances[i];
    const std::string mask_name = "mask_" + std::to_string(i) + ".pgm";
    write_pgm(dir / mask_name, inst.mask);
    instances.push_back(
        {{"box", inst.box}, {"depth_rank", inst.depth_rank}, {"kind", kind_name(inst.kind)}, {"mask", mask_name}});
  }
  write_json(dir / "instances.json", {{"provenance", scene.provenance}, {"instances", instances}});
}

SceneRecord load_scene(const fs::path& dir) {
  SceneRecord scene;
  scene.image = read_ppm(dir / "image.ppm");
  const json meta = read_json(dir / "instances.json");
  try {
    scene.provenance = meta.value("provenance", "");
    for (const json& e : meta.at("instances")) {
      Instance inst;
      inst.box = e.at("box").get<BBox>();
      inst.depth_rank = e.at("depth_rank").get<int>();
      inst.kind = kind_from(e.value("kind", "rectangle"));
      inst.mask = read_pgm(dir / e.at("mask").get<std::string>());
      scene.instances.push_back(std::move(inst));
    }
  } catch (const json::exception& e) {
    throw FormatError(dir.string() + "/instances.json: " + e.what());
  }
  validate_scene(scene);
  return scene;
}

}  // namespace pics
