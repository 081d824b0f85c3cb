#include "pics/interaction_block.hpp"

#include "pics/error.hpp"

#include <cmath>

namespace pics {

ItbParams ItbParams::init(Index d, Rng& rng, double tau) {
  if (tau <= 0) throw std::invalid_argument("temperature must be positive");
  ItbParams p;
  p.self_q = LinearParams::init(d, d, rng);
  p.self_k = LinearParams::init(d, d, rng);
  p.self_v = LinearParams::init(d, d, rng);
  p.self_o = LinearParams::init(d, d, rng, true, 0.5);
  p.f_q = LinearParams::init(d, d, rng);
  p.f_k = LinearParams::init(d, d, rng);
  p.f_v = LinearParams::init(d, d, rng);
  p.g_q = LinearParams::init(d, d, rng);
  p.ex_k = LinearParams::init(d, d, rng);
  p.ex_v = LinearParams::init(d, d, rng);
  p.ffn = FfnParams::init(d, rng);
  p.norm = LayerNormParams::identity(d);
  p.tau = tau;
  return p;
}

namespace {

Var mask_column(Tape& tape, const Mask& m) {
  Matrix col = Eigen::Map<const Matrix>(m.values().data(), static_cast<Index>(m.values().size()), 1);
  return tape.constant(Tensor::from_matrix(std::move(col)));
}

void check_code(const Var& z, const Var& code) {
  if (code.value().rank() != 2 || code.rows() < 1) throw ShapeError("object code must be a non-empty [n, d] matrix");
  if (code.cols() != z.cols()) {
    throw ShapeError("object code dim " + std::to_string(code.cols()) + " vs feature dim " + std::to_string(z.cols()));
  }
}

// Aligns one object code with the gating query: c~_p and its score s_p.
std::pair<Var, Var> gate_align(Binder& bind, const ItbParams& p, Var gate_query, Var code) {
  Var aligned = attention(gate_query, linear(bind, p.f_k, code), linear(bind, p.f_v, code));
  Var score = scale(row_dot(gate_query, aligned), 1.0 / std::sqrt(static_cast<double>(gate_query.cols())));
  return {aligned, score};
}

ExpertResult pair_from_query(Binder& bind, const ItbParams& p, Var query, Var gate_query, Var code_a, Var code_b) {
  auto [ca, sa] = gate_align(bind, p, gate_query, code_a);
  auto [cb, sb] = gate_align(bind, p, gate_query, code_b);
  const double inv_tau = 1.0 / p.tau;
  // alpha_b is sigma(-delta_s / tau), computed from (s_b - s_a) so swapping the
  // inputs swaps the two weights bit for bit.
  Var alpha_a = sigmoid(scale(sub(sa, sb), inv_tau));
  Var alpha_b = sigmoid(scale(sub(sb, sa), inv_tau));
  Var context = add(mul_rows(ca, alpha_a), mul_rows(cb, alpha_b));
  Var h = attention(query, linear(bind, p.f_k, context), linear(bind, p.f_v, context));

  ExpertResult r{h, {}};
  const Index n = query.rows();
  r.report.scores.resize(n, 2);
  r.report.scores.col(0) = sa.mat().col(0);
  r.report.scores.col(1) = sb.mat().col(0);
  r.report.alpha.resize(n, 2);
  r.report.alpha.col(0) = alpha_a.mat().col(0);
  r.report.alpha.col(1) = alpha_b.mat().col(0);
  r.report.delta_s = sa.mat().col(0) - sb.mat().col(0);
  return r;
}

ExpertResult multi_from_query(Binder& bind, const ItbParams& p, Var query, Var gate_query, std::span<const Var> codes) {
  if (codes.size() < 2) throw std::invalid_argument("overlap expert needs at least two object codes");
  std::vector<Var> aligned;
  std::vector<Var> scores;
  for (const Var& c : codes) {
    auto [ct, s] = gate_align(bind, p, gate_query, c);
    aligned.push_back(ct);
    scores.push_back(s);
  }
  Var s_all = concat_cols(scores);
  Var alpha = softmax(scale(s_all, 1.0 / p.tau), -1);
  Var context = mul_rows(aligned[0], column(alpha, 0));
  for (std::size_t i = 1; i < aligned.size(); ++i) {
    context = add(context, mul_rows(aligned[i], column(alpha, static_cast<Index>(i))));
  }
  Var h = attention(query, linear(bind, p.f_k, context), linear(bind, p.f_v, context));
  ExpertResult r{h, {s_all.mat(), alpha.mat(), {}}};
  if (codes.size() == 2) r.report.delta_s = s_all.mat().col(0) - s_all.mat().col(1);
  return r;
}

}  // namespace

Var background_expert(Var z, BackgroundMode mode) {
  if (mode == BackgroundMode::identity_residual) return z;
  return z.tape().constant(Tensor(z.shape()));
}

Var exclusive_expert(Binder& bind, const ItbParams& p, Var z, Var code) {
  check_code(z, code);
  return attention(linear(bind, p.f_q, z), linear(bind, p.ex_k, code), linear(bind, p.ex_v, code));
}

ExpertResult overlap_expert_pair(Binder& bind, const ItbParams& p, Var z, Var code_a, Var code_b) {
  check_code(z, code_a);
  check_code(z, code_b);
  return pair_from_query(bind, p, linear(bind, p.f_q, z), linear(bind, p.g_q, z), code_a, code_b);
}

ExpertResult overlap_expert_multi(Binder& bind, const ItbParams& p, Var z, std::span<const Var> codes) {
  for (const Var& c : codes) check_code(z, c);
  return multi_from_query(bind, p, linear(bind, p.f_q, z), linear(bind, p.g_q, z), codes);
}

Var itb_forward(Binder& bind, const ItbParams& p, Var z, std::span<const Var> codes, const RoutingMasks& routing,
                const ItbOptions& opts, OverlapGateReport* report) {
  Tape& tape = z.tape();
  if (codes.empty()) throw std::invalid_argument("itb_forward: at least one object code required");
  if (routing.object_count() != static_cast<int>(codes.size())) {
    throw std::invalid_argument("itb_forward: routing has " + std::to_string(routing.object_count()) +
                                " exclusive masks for " + std::to_string(codes.size()) + " codes");
  }
  if (static_cast<Index>(routing.width()) * routing.height() != z.rows()) {
    throw ShapeError("itb_forward: routing resolution does not match token count");
  }
  const double err = partition_error(routing);
  if (!(err <= 1e-6)) {
    throw std::invalid_argument("itb_forward: routing masks violate the partition of unity (error " +
                                std::to_string(err) + ")");
  }
  for (const Var& c : codes) check_code(z, c);

  Var attended = attention(linear(bind, p.self_q, z), linear(bind, p.self_k, z), linear(bind, p.self_v, z));
  Var zp = add(z, linear(bind, p.self_o, attended));

  Var query = linear(bind, p.f_q, zp);
  std::vector<Var> ex_terms;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    Var h = attention(query, linear(bind, p.ex_k, codes[i]), linear(bind, p.ex_v, codes[i]));
    ex_terms.push_back(mul_rows(h, mask_column(tape, routing.exclusive[i])));
  }
  Var delta = ex_terms[0];
  for (std::size_t i = 1; i < ex_terms.size(); ++i) delta = add(delta, ex_terms[i]);
  if (opts.background == BackgroundMode::identity_residual) {
    delta = add(mul_rows(background_expert(zp, opts.background), mask_column(tape, routing.background)), delta);
  }

  if (codes.size() >= 2) {
    Var gate_query = linear(bind, p.g_q, zp);
    const bool pairwise = opts.overlap == OverlapPath::pairwise ||
                          (opts.overlap == OverlapPath::automatic && codes.size() == 2);
    if (pairwise && codes.size() != 2) throw std::invalid_argument("pairwise overlap path needs exactly two codes");
    ExpertResult ov = pairwise ? pair_from_query(bind, p, query, gate_query, codes[0], codes[1])
                               : multi_from_query(bind, p, query, gate_query, codes);
    delta = add(delta, mul_rows(ov.h, mask_column(tape, routing.overlap)));
    if (report) *report = std::move(ov.report);
  } else if (report) {
    *report = OverlapGateReport{};
  }

  Var zpp = add(zp, delta);
  return add(zpp, ffn(bind, p.ffn, layer_norm(bind, p.norm, zpp)));
}

std::vector<std::pair<int, int>> stack_resolutions(int depth, int height, int width) {
  if (depth < 1 || depth % 2 == 0) throw std::invalid_argument("stack depth must be a positive odd number");
  const int levels = depth / 2;
  if (height % (1 << levels) || width % (1 << levels)) {
    throw ShapeError("token grid " + std::to_string(height) + "x" + std::to_string(width) + " not divisible by 2^" +
                     std::to_string(levels));
  }
  std::vector<std::pair<int, int>> res;
  for (int k = 0; k <= levels; ++k) res.emplace_back(height >> k, width >> k);
  for (int k = levels - 1; k >= 0; --k) res.emplace_back(height >> k, width >> k);
  return res;
}

Var itb_stack_forward(Binder& bind, std::span<const ItbParams> blocks, Var z, int height, int width,
                      std::span<const Var> codes, std::span<const RoutingMasks> routing, const ItbOptions& opts,
                      std::vector<OverlapGateReport>* reports) {
  const int depth = static_cast<int>(blocks.size());
  const auto res = stack_resolutions(depth, height, width);
  if (routing.size() != blocks.size()) {
    throw std::invalid_argument("itb_stack_forward: need one routing set per block (" + std::to_string(depth) + ")");
  }
  for (int i = 0; i < depth; ++i) {
    if (routing[i].height() != res[i].first || routing[i].width() != res[i].second) {
      throw ShapeError("itb_stack_forward: routing for stage " + std::to_string(i) + " is " +
                       std::to_string(routing[i].height()) + "x" + std::to_string(routing[i].width()) + ", expected " +
                       std::to_string(res[i].first) + "x" + std::to_string(res[i].second));
    }
  }
  if (z.rows() != static_cast<Index>(height) * width) throw ShapeError("itb_stack_forward: token count mismatch");
  if (reports) reports->assign(blocks.size(), OverlapGateReport{});

  const int levels = depth / 2;
  auto run = [&](int i, Var x) {
    return itb_forward(bind, blocks[i], x, codes, routing[i], opts, reports ? &(*reports)[i] : nullptr);
  };
  std::vector<Var> skips;
  Var x = z;
  for (int i = 0; i < levels; ++i) {
    x = run(i, x);
    skips.push_back(x);
    x = avg_pool2(x, res[i].first, res[i].second);
  }
  x = run(levels, x);
  for (int i = levels + 1; i < depth; ++i) {
    const auto [h, w] = res[i - 1];
    x = add(upsample2(x, h, w), skips[static_cast<std::size_t>(depth - 1 - i)]);
    x = run(i, x);
  }
  return x;
}

}  // namespace pics
