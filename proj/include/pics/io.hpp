#pragma once

#include "pics/image.hpp"
#include "pics/mask_algebra.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace pics {

namespace fs = std::filesystem;
using nlohmann::json;

/// Masks as ASCII PGM (P2), maxval 255. Soft values round to the nearest level.
void write_pgm(const fs::path& path, const Mask& m);
/// Reads P2 or P5; values are scaled to [0, 1].
Mask read_pgm(const fs::path& path);

/// Images in [0, 1] as binary PPM (P6, 3 channels) or PGM (P5, 1 channel).
void write_ppm(const fs::path& path, const Image& img);
Image read_ppm(const fs::path& path);

/// Linearly rescales a real-valued map to [0, 255] and writes it as P2, with a
/// JSON sidecar {"min": .., "max": ..} next to it (same stem, .json).
void write_rescaled_pgm(const fs::path& path, const Grid& values);

void write_json(const fs::path& path, const json& j);
json read_json(const fs::path& path);

void to_json(json& j, const BBox& b);
void from_json(const json& j, BBox& b);

}  // namespace pics
