#include "../support.hpp"

#include "pics/layers.hpp"

#include <doctest.h>

#include <cmath>

using namespace pics;
using namespace pics::testing;

namespace {

constexpr Index kDim = 8;
constexpr int kSide = 4;

struct Fixture {
  Rng rng{11};
  ItbParams p = ItbParams::init(kDim, rng);
  Tensor z = Tensor::randn({kSide * kSide, kDim}, rng);
  Tensor ca = random_code(rng, kDim);
  Tensor cb = random_code(rng, kDim);
};

RoutingMasks all_background(int side, int m) {
  std::vector<Mask> ms(static_cast<std::size_t>(m), Mask(side, side));
  return build_routing_masks(ms, side, side);
}

}  // namespace

TEST_CASE("background expert modes") {
  Fixture f;
  Tape t;
  const Var z = t.constant(f.z);
  CHECK(background_expert(z, BackgroundMode::zero_residual).mat().isZero(0));
  CHECK(bit_equal(background_expert(z, BackgroundMode::identity_residual).mat(), f.z.matrix()));

  // Pure background, every other update silenced: zero mode passes z through,
  // identity mode doubles it.
  f.p.self_o = LinearParams::zeros(kDim, kDim);
  f.p.ffn.down = LinearParams::zeros(4 * kDim, kDim);
  Binder bind(t, false);
  const std::vector<Var> codes{t.constant(f.ca), t.constant(f.cb)};
  const RoutingMasks bg = all_background(kSide, 2);
  CHECK(bit_equal(itb_forward(bind, f.p, z, codes, bg).mat(), f.z.matrix()));
  const Var doubled = itb_forward(bind, f.p, z, codes, bg, {BackgroundMode::identity_residual});
  CHECK(max_abs_diff(doubled.mat(), 2.0 * f.z.matrix()) <= 1e-15);

  // Where no location is background the two modes coincide.
  Mask ones(kSide, kSide);
  ones.values() = 1;
  const std::vector<Mask> covered{ones, bbox_to_mask({0, 0, 2, 4}, kSide, kSide)};
  const RoutingMasks r = build_routing_masks(covered, kSide, kSide);
  CHECK(bit_equal(itb_forward(bind, f.p, z, codes, r).mat(),
                  itb_forward(bind, f.p, z, codes, r, {BackgroundMode::identity_residual}).mat()));
}

TEST_CASE("exclusive expert") {
  Fixture f;
  Tape t;
  Binder bind(t, false);
  const Tensor one = Tensor::randn({1, kDim}, f.rng);
  const Var h = exclusive_expert(bind, f.p, t.constant(f.z), t.constant(one));
  const Var v = linear(bind, f.p.ex_v, t.constant(one));
  CHECK(h.shape() == f.z.shape());
  for (Index i = 0; i < h.rows(); ++i) CHECK(max_abs_diff(h.mat().row(i), v.mat()) <= 1e-15);

  Mask gate(kSide, kSide);
  gate.values() = Tensor::randn({kSide, kSide}, f.rng).matrix().array().abs().min(1.0);
  const Tensor g = Tensor::from_matrix(Eigen::Map<const Matrix>(gate.values().data(), kSide * kSide, 1));
  const auto r = grad_check(
      [&](Tape& tt, Var zz) {
        Binder b(tt, false);
        return sum(mul_rows(exclusive_expert(b, f.p, zz, tt.constant(f.ca)), tt.constant(g)));
      },
      f.z);
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("pairwise gate") {
  Fixture f;
  Tape t;
  Binder bind(t, false);
  const Var z = t.constant(f.z);
  const Var a = t.constant(f.ca);
  const ExpertResult same = overlap_expert_pair(bind, f.p, z, a, a);
  CHECK((same.report.alpha.array() == 0.5).all());
  CHECK(same.report.delta_s.isZero(0));

  const ExpertResult ab = overlap_expert_pair(bind, f.p, z, a, t.constant(f.cb));
  for (Index i = 0; i < ab.report.alpha.rows(); ++i) {
    const double ds = ab.report.scores(i, 0) - ab.report.scores(i, 1);
    CHECK(ab.report.delta_s(i) == ds);
    CHECK(ab.report.alpha(i, 0) == doctest::Approx(1.0 / (1.0 + std::exp(-ds / f.p.tau))).epsilon(1e-14));
    CHECK(ab.report.alpha(i, 0) + ab.report.alpha(i, 1) == doctest::Approx(1.0).epsilon(1e-15));
  }
  // A score gap of exactly tau gives the logistic value at 1.
  CHECK(1.0 / (1.0 + std::exp(-f.p.tau / f.p.tau)) == doctest::Approx(0.731059).epsilon(1e-6));
}

TEST_CASE("multi gate") {
  Fixture f;
  Tape t;
  Binder bind(t, false);
  const Var z = t.constant(f.z);
  const Var a = t.constant(f.ca);
  for (int m : {2, 3, 4}) {
    const std::vector<Var> codes(static_cast<std::size_t>(m), a);
    const ExpertResult r = overlap_expert_multi(bind, f.p, z, codes);
    CHECK((r.report.alpha.array() - 1.0 / m).abs().maxCoeff() <= 1e-15);
    const ExpertResult pair = overlap_expert_pair(bind, f.p, z, a, a);
    CHECK(max_abs_diff(r.h.mat(), pair.h.mat()) <= 1e-12);
  }
  const std::vector<Var> lone{a};
  CHECK_THROWS(overlap_expert_multi(bind, f.p, z, lone));
}

TEST_CASE("block routing contracts") {
  Fixture f;
  Tape t;
  Binder bind(t, false);
  const Var z = t.constant(f.z);
  const std::vector<Var> codes{t.constant(f.ca), t.constant(f.cb)};
  const std::vector<Mask> disjoint{bbox_to_mask({0, 0, 2, 4}, kSide, kSide), bbox_to_mask({2, 0, 4, 4}, kSide, kSide)};
  const RoutingMasks r = build_routing_masks(disjoint, kSide, kSide);
  const Var before = itb_forward(bind, f.p, z, codes, r);
  ItbParams scrambled = f.p;
  scrambled.g_q = LinearParams::init(kDim, kDim, f.rng);
  CHECK(bit_equal(itb_forward(bind, scrambled, z, codes, r).mat(), before.mat()));

  const std::vector<Var> one{codes[0]};
  CHECK_THROWS(itb_forward(bind, f.p, z, one, r));
  const RoutingMasks coarse = build_routing_masks(disjoint, 2, 2);
  CHECK_THROWS(itb_forward(bind, f.p, z, codes, coarse));
  RoutingMasks broken = r;
  broken.background.values() += 0.5;
  CHECK_THROWS(itb_forward(bind, f.p, z, codes, broken));

  const std::vector<Mask> overlapping{bbox_to_mask({0, 0, 3, 4}, kSide, kSide), bbox_to_mask({1, 0, 4, 4}, kSide, kSide)};
  const RoutingMasks ro = build_routing_masks(overlapping, kSide, kSide);
  const Var pair = itb_forward(bind, f.p, z, codes, ro, {BackgroundMode::zero_residual, OverlapPath::pairwise});
  const Var multi = itb_forward(bind, f.p, z, codes, ro, {BackgroundMode::zero_residual, OverlapPath::multi});
  CHECK(max_abs_diff(pair.mat(), multi.mat()) <= 1e-12);
}

TEST_CASE("stack") {
  CHECK(stack_resolutions(5, 16, 16) ==
        std::vector<std::pair<int, int>>{{16, 16}, {8, 8}, {4, 4}, {8, 8}, {16, 16}});
  CHECK(stack_resolutions(1, 4, 4) == std::vector<std::pair<int, int>>{{4, 4}});
  CHECK_THROWS(stack_resolutions(4, 16, 16));

  Fixture f;
  Tape t;
  Binder bind(t, false);
  const Var z = t.constant(f.z);
  const std::vector<Var> codes{t.constant(f.ca), t.constant(f.cb)};
  const std::vector<Mask> ms = overlapping_pair(f.rng, kSide, kSide);
  const std::vector<RoutingMasks> routing{build_routing_masks(ms, kSide, kSide)};
  const std::vector<ItbParams> blocks{f.p};
  const Var single = itb_forward(bind, f.p, z, codes, routing[0]);
  CHECK(bit_equal(itb_stack_forward(bind, blocks, z, kSide, kSide, codes, routing).mat(), single.mat()));

  std::vector<ItbParams> three{f.p, ItbParams::init(kDim, f.rng), ItbParams::init(kDim, f.rng)};
  std::vector<RoutingMasks> rs;
  for (const auto& [h, w] : stack_resolutions(3, kSide, kSide)) rs.push_back(build_routing_masks(ms, h, w));
  std::vector<OverlapGateReport> reports;
  const Var out = itb_stack_forward(bind, three, z, kSide, kSide, codes, rs, {}, &reports);
  CHECK(out.shape() == f.z.shape());
  CHECK(reports.size() == 3);
  CHECK(reports[1].alpha.rows() == 4);
}
