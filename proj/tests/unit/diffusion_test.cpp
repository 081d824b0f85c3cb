#include "../support.hpp"

#include "pics/diffusion.hpp"
#include "pics/layers.hpp"

#include <doctest.h>

#include <cmath>

using namespace pics;
using namespace pics::testing;

namespace {

const NoiseSchedule& default_schedule() {
  static const NoiseSchedule s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  return s;
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.dim = 8;
  m.depth = 3;
  m.crop_size = 8;
  return m;
}

}  // namespace

TEST_CASE("schedule") {
  const NoiseSchedule& s = default_schedule();
  CHECK(s.abar(0) == 1.0);
  for (int t = 1; t <= s.steps; ++t) REQUIRE(s.abar(t) < s.abar(t - 1));
  for (std::size_t i = 1; i < s.betas.size(); ++i) REQUIRE(s.betas[i] > s.betas[i - 1]);
  // Cumulative product oracle.
  double prod = 1;
  for (int t = 1; t <= 10; ++t) prod *= 1 - s.betas[static_cast<std::size_t>(t - 1)];
  CHECK(s.abar(10) == doctest::Approx(prod).epsilon(1e-14));
  CHECK_THROWS(s.abar(1001));
  CHECK_THROWS(NoiseSchedule::linear(10, 0.02, 1e-4));
}

TEST_CASE("forward process") {
  NoiseSchedule s;
  s.steps = 1;
  s.betas = {0.75};
  s.alpha_bar = {1.0, 0.25};
  const Tensor out = q_sample(Tensor::scalar(1.0), 1, Tensor::scalar(2.0), s);
  CHECK(out.item() == doctest::Approx(0.5 + 2 * std::sqrt(0.75)).epsilon(1e-15));
  CHECK(q_sample(Tensor::scalar(3.0), 1, Tensor::scalar(0.0), s).item() == 1.5);
  CHECK_THROWS(q_sample(Tensor::scalar(1.0), 0, Tensor::scalar(0.0), s));
  CHECK_THROWS(q_sample(Tensor::scalar(1.0), 2, Tensor::scalar(0.0), s));
  CHECK_THROWS_AS(q_sample(Tensor({2}), 1, Tensor({3}), s), ShapeError);

  const NoiseSchedule& d = default_schedule();
  Rng rng(1);
  constexpr Index n = 100000;
  for (int t : {50, 500, 950}) {
    const Tensor x0 = Tensor::constant({n}, 0.6);
    const Matrix x = q_sample(x0, t, Tensor::randn({n}, rng), d).matrix();
    const double mu = x.mean();
    const double var = (x.array() - mu).square().sum() / (n - 1);
    CHECK(var == doctest::Approx(1 - d.abar(t)).epsilon(0.01));
    CHECK(mu == doctest::Approx(std::sqrt(d.abar(t)) * 0.6).epsilon(0.01));
  }
}

TEST_CASE("ddim") {
  const std::vector<int> ts = ddim_timesteps(1000, 50);
  REQUIRE(ts.size() == 50);
  CHECK(ts.front() == 1000);
  CHECK(ts.back() >= 1);
  for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);
  CHECK_THROWS(ddim_timesteps(10, 11));

  Rng rng(2);
  const Matrix xt = Tensor::randn({6, 3}, rng).matrix();
  const Matrix eps = Tensor::randn({6, 3}, rng).matrix();
  const double a = 0.3;
  const Matrix x0 = (xt - std::sqrt(1 - a) * eps) / std::sqrt(a);
  CHECK(max_abs_diff(ddim_step(xt, eps, a, 1.0), x0) <= 1e-14);
  const Matrix mid = ddim_step(xt, eps, a, 0.6);
  CHECK(max_abs_diff(mid, std::sqrt(0.6) * x0 + std::sqrt(0.4) * eps) <= 1e-14);

  // Inside [-1, 1] clipping changes nothing; outside it clamps the estimate.
  const Matrix small = 0.1 * xt;
  const Matrix eps0 = Matrix::Zero(6, 3);
  CHECK(max_abs_diff(ddim_step_clipped(small, eps0, 0.9, 1.0), small / std::sqrt(0.9)) <= 1e-15);
  const Matrix big = Matrix::Constant(2, 2, 5.0);
  CHECK((ddim_step_clipped(big, Matrix::Zero(2, 2), 0.5, 1.0).array() == 1.0).all());
}

TEST_CASE("guidance combine") {
  Rng rng(3);
  const Matrix c = Tensor::randn({5, 4}, rng).matrix();
  const Matrix u = Tensor::randn({5, 4}, rng).matrix();
  CHECK(bit_equal(cfg_combine(c, u, 1.0), c));
  CHECK(bit_equal(cfg_combine(c, u, 0.0), u));
  const Matrix five = cfg_combine(c, u, 5.0);
  CHECK(max_abs_diff(five, u + 5.0 * (c - u)) <= 1e-13);
  const Matrix mid = cfg_combine(c, u, 2.5);
  CHECK(max_abs_diff(mid, 0.5 * (cfg_combine(c, u, 0.0) + five)) <= 1e-13);
}

TEST_CASE("zero-initialized head predicts zero noise") {
  Config cfg;
  CorpusConfig cc = cfg.corpus;
  cc.scenes = 8;
  cc.heldout = 0;
  const Corpus corpus = build_corpus(cc, 5);
  const ModelState st = ModelState::init(cfg.model, 32, 32, 5);
  Tape t;
  Binder bind(t, false);
  const double loss = batch_loss(bind, st.model, corpus.train, default_schedule(), cfg.train, 6).value().item();
  // Mean of 8 * 3072 squared standard normals: standard deviation ~ 0.009.
  CHECK(loss == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("batch loss gradient") {
  ModelConfig mc = tiny_model();
  Model model = Model::init(mc, 16, 16, 7);
  Rng rng(8);
  model.out_proj.weight = Tensor::randn(model.out_proj.weight.shape(), rng, 0.3);
  CorpusConfig cc;
  cc.width = 16;
  cc.height = 16;
  cc.scenes = 2;
  cc.heldout = 0;
  const Corpus corpus = build_corpus(cc, 9);
  TrainConfig tc;
  tc.p_uncond = 0.5;
  std::vector<std::pair<std::string, const Tensor*>> params;
  model.visit([&](const std::string& name, const Tensor& p) { params.emplace_back(name, &p); });
  for (const auto& [name, p] : params) {
    if (name != "in_proj.weight" && name != "block1.f_q.weight" && name != "block0.ex_v.weight" &&
        name != "encoder.proj.weight" && name != "time.fc1.weight" && name != "null_code" && name != "out_norm.gain") {
      continue;
    }
    INFO(name);
    const auto r = grad_check(
        [&](Tape& t, Var v) {
          Binder bind(t, false);
          bind.substitute(*p, v);
          return batch_loss(bind, model, corpus.train, default_schedule(), tc, 10);
        },
        *p);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("training is reproducible and moves parameters") {
  ModelConfig mc = tiny_model();
  CorpusConfig cc;
  cc.width = 16;
  cc.height = 16;
  cc.scenes = 6;
  cc.heldout = 1;
  const Corpus corpus = build_corpus(cc, 3);
  TrainConfig tc;
  tc.batch = 2;
  ModelState a = ModelState::init(mc, 16, 16, 3);
  ModelState b = ModelState::init(mc, 16, 16, 3);
  const Matrix before = a.model.in_proj.weight.matrix();
  std::vector<double> losses;
  train(a, corpus, default_schedule(), tc, 4, [&](std::int64_t, double l) { losses.push_back(l); });
  train(b, corpus, default_schedule(), tc, 4);
  CHECK(losses.size() == 4);
  CHECK(a.step == 4);
  CHECK_FALSE(bit_equal(before, a.model.in_proj.weight.matrix()));
  std::vector<Matrix> pa;
  a.model.visit([&](const std::string&, const Tensor& t) { pa.push_back(t.matrix()); });
  std::size_t k = 0;
  b.model.visit([&](const std::string&, const Tensor& t) { CHECK(bit_equal(pa[k++], t.matrix())); });
}

TEST_CASE("sampling") {
  ModelConfig mc = tiny_model();
  Model model = Model::init(mc, 16, 16, 4);
  Rng rng(5);
  model.out_proj.weight = Tensor::randn(model.out_proj.weight.shape(), rng, 0.2);
  CorpusConfig cc;
  cc.width = 16;
  cc.height = 16;
  cc.scenes = 1;
  cc.heldout = 1;
  const Corpus corpus = build_corpus(cc, 6);
  const Conditioning cond = conditioning_from(corpus.heldout[0]);
  SampleOptions so;
  so.steps = 10;
  so.seed = 1;
  so.record_steps = {0, 9};
  const SampleResult a = ddim_sample(model, default_schedule(), cond, so);
  const SampleResult b = ddim_sample(model, default_schedule(), cond, so);
  CHECK(bit_equal(a.tokens, b.tokens));
  REQUIRE(a.delta_s.size() == 2);
  CHECK(a.delta_s[1].step == 9);
  CHECK(a.delta_s[1].values.rows() == 16);
  CHECK(a.image.channel(0).minCoeff() >= 0);
  CHECK(a.image.channel(0).maxCoeff() <= 1);
  CHECK(a.tokens.cwiseAbs().maxCoeff() <= 1.0);
  so.seed = 2;
  CHECK_FALSE(bit_equal(ddim_sample(model, default_schedule(), cond, so).tokens, a.tokens));
  so.steps = 1001;
  CHECK_THROWS(ddim_sample(model, default_schedule(), cond, so));
}

TEST_CASE("sequential baseline") {
  ModelConfig mc = tiny_model();
  Model model = Model::init(mc, 16, 16, 4);
  Rng rng(6);
  model.out_proj.weight = Tensor::randn(model.out_proj.weight.shape(), rng, 0.2);
  CorpusConfig cc;
  cc.width = 16;
  cc.height = 16;
  cc.scenes = 0;
  cc.heldout = 1;
  const Conditioning cond = conditioning_from(build_corpus(cc, 7).heldout[0]);
  SampleOptions so;
  so.steps = 8;
  so.seed = 3;
  Conditioning first{masked_background(cond.background, cond.masks[0]), {cond.masks[0]}, {cond.crops[0]},
                     {cond.crop_masks[0]}};
  const std::vector<int> only{0};
  CHECK(sequential_baseline(model, default_schedule(), first, only, so) ==
        ddim_sample(model, default_schedule(), first, so).image);

  // Disjoint objects under a zero head: the overlap expert has nothing to act
  // on and both protocols reduce to the same deterministic trajectory.
  Model inert = Model::init(mc, 16, 16, 4);
  Conditioning apart = cond;
  apart.masks = {bbox_to_mask({0, 0, 5, 5}, 16, 16), bbox_to_mask({9, 9, 15, 15}, 16, 16)};
  apart.background = masked_background(cond.background, bbox_to_mask({0, 0, 16, 16}, 16, 16));
  const std::vector<int> order{0, 1};
  const Image par = ddim_sample(inert, default_schedule(), apart, so).image;
  const Image seq = sequential_baseline(inert, default_schedule(), apart, order, so);
  for (int c = 0; c < 3; ++c) CHECK((par.channel(c) - seq.channel(c)).abs().maxCoeff() <= 1e-6);
}

TEST_CASE("state serialization") {
  ModelConfig mc = tiny_model();
  ModelState st = ModelState::init(mc, 16, 16, 12);
  st.step = 17;
  quantize(st);
  const ModelState back = from_checkpoint(to_checkpoint(st));
  CHECK(back.step == 17);
  CHECK(back.seed == 12);
  CHECK(back.model.cfg.dim == 8);
  std::vector<Matrix> want;
  st.model.visit([&](const std::string&, const Tensor& t) { want.push_back(t.matrix()); });
  std::size_t k = 0;
  back.model.visit([&](const std::string&, const Tensor& t) { CHECK(bit_equal(want[k++], t.matrix())); });
  Checkpoint broken = to_checkpoint(st);
  broken.tensors.pop_back();
  CHECK_THROWS(from_checkpoint(broken));
}

TEST_CASE("derived seeds") {
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
  CHECK(derive_seed(1, 2) != derive_seed(2, 1));
  CHECK(derive_seed(0, 0) != derive_seed(0, 1));
}
