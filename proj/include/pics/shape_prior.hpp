#pragma once

#include "pics/image.hpp"
#include "pics/layers.hpp"
#include "pics/mask_algebra.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace pics {

/// Non-overlapping patch flattening: token (ty, tx) at row ty*(W/ps) + tx,
/// feature ((dy*ps + dx) * C + c).
Matrix patchify(const Image& img, int patch);
Matrix patchify(const Matrix& pixel_tokens, int width, int height, int patch);
/// Inverse of patchify, returning pixel-major tokens [H*W, C].
Matrix unpatchify(const Matrix& patches, int width, int height, int channels, int patch);

/// Trainable linear patch embedding standing in for a frozen image encoder.
struct PatchEncoder {
  LinearParams proj;
  int patch = 4;
  int channels = 3;

  static PatchEncoder init(int channels, int patch, Index d, Rng& rng);

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    proj.visit(prefix + ".proj", f);
  }
};

/// [(H/ps)*(W/ps), d] object code.
Var encode_object(Binder& bind, const PatchEncoder& enc, const Image& x);

struct ViewSet {
  std::vector<Image> views;
  std::string source = "synthetic-stub";
};

/// K seed-deterministic views: view 0 is x itself, the rest are centered
/// affine warps with scale in [0.8, 1.2] and shear in [-0.2, 0.2].
ViewSet synth_multiview(const Image& x, int k, std::uint64_t seed);

/// LN over the concatenated views, then Linear -> GELU -> Linear to d.
struct FusionParams {
  LayerNormParams norm;
  LinearParams fc1;
  LinearParams fc2;

  static FusionParams init(Index d, Rng& rng);

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    norm.visit(prefix + ".norm", f);
    fc1.visit(prefix + ".fc1", f);
    fc2.visit(prefix + ".fc2", f);
  }
};

std::vector<int> random_permutation(int n, Rng& rng);

/// codes[perm[0]] ; codes[perm[1]] ; ... along the token axis.
Var concat_views(std::span<const Var> codes, std::span<const int> perm);
/// [K*n, d] fused multi-view descriptor.
Var fuse_multiview(Binder& bind, const FusionParams& p, std::span<const Var> codes, std::span<const int> perm);

/// Rotation about the image center. The image is sampled bilinearly and the
/// mask by nearest neighbour thresholded at 0.5; samples from outside the
/// frame are 0.
std::pair<Image, Mask> rotate_augment(const Image& x, const Mask& m, double theta);

/// theta ~ U(-pi/6, pi/6).
double sample_rotation(Rng& rng);

}  // namespace pics
