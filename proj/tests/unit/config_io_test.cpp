#include "pics/checkpoint.hpp"
#include "pics/config.hpp"
#include "pics/error.hpp"
#include "pics/io.hpp"

#include <doctest.h>

#include <fstream>
#include <unistd.h>

using namespace pics;

namespace {

const fs::path kDir = fs::temp_directory_path() / ("pics_io_" + std::to_string(::getpid()));
const struct Cleanup {
  ~Cleanup() { fs::remove_all(kDir); }
} cleanup;

fs::path scratch(const std::string& name) {
  const fs::path& dir = kDir;
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("config round trip and strictness") {
  Config c;
  c.seed = 99;
  c.model.tau = 0.25;
  c.select.mode = "multi:3";
  const Config back = config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));

  CHECK(config_from_json(json::object()).train.lr == Config{}.train.lr);
  CHECK_THROWS_AS(config_from_json({{"model", {{"dims", 4}}}}), FormatError);
  CHECK_THROWS_AS(config_from_json({{"bogus", 1}}), FormatError);
  CHECK_THROWS_AS(config_from_json({{"model", {{"dim", "wide"}}}}), FormatError);
  CHECK_THROWS_AS(config_from_json({{"model", 3}}), FormatError);
}

TEST_CASE("overrides and resolution") {
  json doc = to_json(Config{});
  apply_override(doc, "model.tau=0.75");
  apply_override(doc, "model.bg_mode=identity");
  apply_override(doc, "select.literal_guard=false");
  const Config c = config_from_json(doc);
  CHECK(c.model.tau == 0.75);
  CHECK(c.model.bg_mode == "identity");
  CHECK_FALSE(c.select.literal_guard);
  CHECK_THROWS(apply_override(doc, "no_equals_sign"));
  json typo = doc;
  apply_override(typo, "model.nope=1");
  CHECK_THROWS_AS(config_from_json(typo), FormatError);

  const fs::path file = scratch("cfg.json");
  write_json(file, {{"train", {{"steps", 7}}}, {"seed", 3}});
  const Config r = resolve_config(file, {"train.batch=2"}, 11);
  CHECK(r.train.steps == 7);
  CHECK(r.train.batch == 2);
  CHECK(r.seed == 11);
  CHECK(resolve_config(std::nullopt, {}).seed == 0);
  CHECK_THROWS(resolve_config(std::nullopt, {"model.depth=4"}));
  CHECK_THROWS(resolve_config(std::nullopt, {"model.patch=3"}));
  CHECK_THROWS(resolve_config(std::nullopt, {"model.bg_mode=maybe"}));
  CHECK_THROWS(resolve_config(std::nullopt, {"sample.cfg_scale=-1"}));
}

TEST_CASE("image files") {
  Mask m(5, 3);
  m(1, 2) = 1;
  m(2, 4) = 0.5;
  write_pgm(scratch("m.pgm"), m);
  const Mask mb = read_pgm(scratch("m.pgm"));
  CHECK(mb(1, 2) == 1);
  CHECK(mb(2, 4) == doctest::Approx(128.0 / 255.0));
  CHECK(mb(0, 0) == 0);

  Image img(4, 2, 3);
  for (int c = 0; c < 3; ++c) img.channel(c) = (c + 1) * 51.0 / 255.0;
  write_ppm(scratch("i.ppm"), img);
  CHECK(read_ppm(scratch("i.ppm")) == img);

  Grid g(2, 2);
  g << -2, 0, 1, 2;
  write_rescaled_pgm(scratch("g.pgm"), g);
  const json side = read_json(scratch("g.json"));
  CHECK(side["min"] == -2.0);
  CHECK(side["max"] == 2.0);
  const Mask gm = read_pgm(scratch("g.pgm"));
  CHECK(gm(0, 0) == 0);
  CHECK(gm(1, 1) == 1);

  std::ofstream(scratch("bad.pgm")) << "P7\n1 1\n255\n0\n";
  CHECK_THROWS_AS(read_pgm(scratch("bad.pgm")), FormatError);
  CHECK_THROWS(read_ppm(scratch("missing.ppm")));
  CHECK_THROWS(write_ppm(scratch("two.ppm"), Image(2, 2, 2)));

  const BBox b{1, 2, 3, 4};
  CHECK(json(b).get<BBox>() == b);
}

TEST_CASE("checkpoint container") {
  Checkpoint ck;
  std::mt19937_64 rng(4);
  ck.tensors.push_back({"a", round_to_f32(Tensor::randn({3, 4}, rng))});
  ck.tensors.push_back({"b.c", round_to_f32(Tensor::randn({5}, rng))});
  ck.meta = {{"step", 12}};
  const std::vector<std::uint8_t> bytes = encode_checkpoint(ck);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "PICS");
  CHECK(bytes[4] == kCheckpointVersion);
  const Checkpoint back = decode_checkpoint(bytes);
  REQUIRE(back.tensors.size() == 2);
  CHECK(back.tensors[1].name == "b.c");
  CHECK(back.tensors[1].tensor.shape() == Shape{5});
  CHECK((back.tensors[0].tensor.matrix().array() == ck.tensors[0].tensor.matrix().array()).all());
  CHECK(back.meta == ck.meta);

  save_checkpoint(scratch("c.pics"), ck);
  CHECK(load_checkpoint(scratch("c.pics")).tensors[0].tensor.matrix() == ck.tensors[0].tensor.matrix());

  std::vector<std::uint8_t> bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 3);
  CHECK_THROWS_AS(decode_checkpoint(cut), FormatError);

  const Tensor x = Tensor::scalar(0.1);
  CHECK(round_to_f32(x).item() == static_cast<double>(0.1f));
  CHECK(round_to_f32(round_to_f32(x)).item() == round_to_f32(x).item());
}
