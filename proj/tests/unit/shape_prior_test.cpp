#include "../support.hpp"

#include "pics/shape_prior.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace pics;
using namespace pics::testing;

namespace {

Image random_image(Rng& rng, int w, int h, int c = 3) {
  Image img(w, h, c);
  std::uniform_real_distribution<double> u(0, 1);
  for (int k = 0; k < c; ++k) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) img.at(k, y, x) = u(rng);
    }
  }
  return img;
}

}  // namespace

TEST_CASE("patchify layout and inverse") {
  Rng rng(1);
  const Image img = random_image(rng, 8, 4);
  const Matrix p = patchify(img, 2);
  CHECK(p.rows() == 8);
  CHECK(p.cols() == 12);
  // Token (1, 2), offset (dy=1, dx=0), channel 2.
  CHECK(p(1 * 4 + 2, (1 * 2 + 0) * 3 + 2) == img.at(2, 3, 4));
  CHECK(bit_equal(unpatchify(p, 8, 4, 3, 2), img.to_tokens()));
  CHECK(bit_equal(patchify(img.to_tokens(), 8, 4, 2), p));
  CHECK_THROWS(patchify(img, 3));
}

TEST_CASE("patch encoder") {
  Rng rng(2);
  PatchEncoder enc = PatchEncoder::init(3, 8, 16, rng);
  const Image img = random_image(rng, 32, 32);
  Tape t;
  Binder bind(t, false);
  CHECK(encode_object(bind, enc, img).shape() == Shape{16, 16});

  enc.proj.bias.matrix().setZero();
  CHECK(encode_object(bind, enc, Image(32, 32, 3)).mat().isZero(0));
  const Image scaled = map_channels(img, 2.5, 0.0);
  CHECK(max_abs_diff(encode_object(bind, enc, scaled).mat(), 2.5 * encode_object(bind, enc, img).mat()) <= 1e-9);

  Image changed = img;
  changed.at(1, 9, 17) += 1.0;  // inside token (1, 2)
  const Matrix diff = encode_object(bind, enc, changed).mat() - encode_object(bind, enc, img).mat();
  for (Index i = 0; i < diff.rows(); ++i) CHECK((diff.row(i).cwiseAbs().maxCoeff() > 0) == (i == 1 * 4 + 2));
}

TEST_CASE("multiview synthesis") {
  Rng rng(3);
  const Image img = random_image(rng, 16, 16);
  const ViewSet one = synth_multiview(img, 1, 9);
  REQUIRE(one.views.size() == 1);
  CHECK(one.views[0] == img);
  const ViewSet a = synth_multiview(img, 6, 9);
  const ViewSet b = synth_multiview(img, 6, 9);
  REQUIRE(a.views.size() == 6);
  CHECK(a.views[0] == img);
  for (std::size_t k = 0; k < 6; ++k) CHECK(a.views[k] == b.views[k]);
  CHECK_FALSE(a.views[1] == img);
  CHECK_FALSE(synth_multiview(img, 6, 10).views[1] == a.views[1]);
}

TEST_CASE("fusion") {
  Rng rng(4);
  const FusionParams p = FusionParams::init(8, rng);
  Tape t;
  Binder bind(t, false);
  const Var c = t.constant(Tensor::randn({3, 8}, rng));
  const std::vector<Var> same{c, c, c, c};
  const std::vector<int> id{0, 1, 2, 3};
  const std::vector<int> perm{2, 0, 3, 1};
  const Var f1 = fuse_multiview(bind, p, same, id);
  CHECK(f1.shape() == Shape{12, 8});
  CHECK(bit_equal(f1.mat(), fuse_multiview(bind, p, same, perm).mat()));

  const std::vector<Var> single{c};
  const std::vector<int> zero{0};
  const Var direct = linear(bind, p.fc2, gelu(linear(bind, p.fc1, layer_norm(bind, p.norm, c))));
  CHECK(bit_equal(fuse_multiview(bind, p, single, zero).mat(), direct.mat()));

  std::vector<Var> distinct;
  for (int k = 0; k < 4; ++k) distinct.push_back(t.constant(Tensor::randn({3, 8}, rng)));
  const Matrix cat = concat_views(distinct, perm).mat();
  for (std::size_t k = 0; k < perm.size(); ++k) {
    CHECK(bit_equal(cat.middleRows(static_cast<Index>(3 * k), 3), distinct[static_cast<std::size_t>(perm[k])].mat()));
  }
  const std::vector<int> bad{0, 0, 1, 2};
  CHECK_THROWS(concat_views(distinct, bad));

  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> q = random_permutation(7, rng);
    std::sort(q.begin(), q.end());
    CHECK(q == std::vector<int>{0, 1, 2, 3, 4, 5, 6});
  }
}

TEST_CASE("rotation augmentation") {
  Rng rng(5);
  const Image img = random_image(rng, 16, 16);
  const Mask m = bbox_to_mask({3, 4, 12, 10}, 16, 16);
  const auto [same_img, same_mask] = rotate_augment(img, m, 0.0);
  CHECK(same_img == img);
  CHECK(same_mask == m);

  Mask disk(32, 32);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) disk(y, x) = std::hypot(x + 0.5 - 16, y + 0.5 - 16) <= 9 ? 1.0 : 0.0;
  }
  for (double theta : {0.2, -0.4, std::numbers::pi / 6}) {
    const Mask r = rotate_augment(Image(32, 32, 1), disk, theta).second;
    CHECK(r.is_binary());
    CHECK(std::abs(r.area() - disk.area()) <= 0.05 * disk.area());
  }
  for (int i = 0; i < 10000; ++i) {
    const double th = sample_rotation(rng);
    REQUIRE(std::abs(th) <= std::numbers::pi / 6);
  }
}
