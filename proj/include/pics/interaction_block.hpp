#pragma once

#include "pics/layers.hpp"
#include "pics/mask_algebra.hpp"

#include <span>
#include <utility>
#include <vector>

namespace pics {

/// How the background expert feeds the residual update.
///  - zero_residual: contributes nothing, so background features pass through
///    the region-gated update unchanged (default).
///  - identity_residual: h_bg = z, i.e. the literal gated residual, which
///    doubles pure-background activations.
enum class BackgroundMode { zero_residual, identity_residual };

/// Which overlap expert handles M == 2 scenes. `automatic` uses the pairwise
/// logistic gate for two objects and the softmax gate otherwise.
enum class OverlapPath { automatic, pairwise, multi };

/// Learned weights of one interaction block. Inner dims are all d.
/// f_q/f_k/f_v serve both the gate aggregation and the context injection of
/// the overlap expert, and f_q also forms the exclusive experts' queries.
/// ex_k/ex_v are the exclusive experts' key/value projections, shared by every
/// object slot so the block is invariant to object order.
struct ItbParams {
  LinearParams self_q, self_k, self_v, self_o;
  LinearParams f_q, f_k, f_v, g_q;
  LinearParams ex_k, ex_v;
  FfnParams ffn;
  LayerNormParams norm;
  double tau = 0.5;

  static ItbParams init(Index d, Rng& rng, double tau = 0.5);
  Index dim() const { return f_q.in_dim(); }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    self_q.visit(prefix + ".self_q", f);
    self_k.visit(prefix + ".self_k", f);
    self_v.visit(prefix + ".self_v", f);
    self_o.visit(prefix + ".self_o", f);
    f_q.visit(prefix + ".f_q", f);
    f_k.visit(prefix + ".f_k", f);
    f_v.visit(prefix + ".f_v", f);
    g_q.visit(prefix + ".g_q", f);
    ex_k.visit(prefix + ".ex_k", f);
    ex_v.visit(prefix + ".ex_v", f);
    ffn.visit(prefix + ".ffn", f);
    norm.visit(prefix + ".norm", f);
  }
};

/// Per-location gate diagnostics of the overlap expert.
struct OverlapGateReport {
  Matrix scores;            // [hw, M]: s_p = <q_g, c~_p> / sqrt(d)
  Matrix alpha;             // [hw, M]: mixing weights, rows sum to 1
  Eigen::VectorXd delta_s;  // [hw]: s_a - s_b (pairwise gate only)
};

struct ExpertResult {
  Var h;
  OverlapGateReport report;
};

Var background_expert(Var z, BackgroundMode mode);

/// CrossAttn(f_Q(z), K(c_p), V(c_p)); the caller gates with the exclusive mask.
Var exclusive_expert(Binder& bind, const ItbParams& p, Var z, Var code);

/// Attention-gated overlap expert for two objects: logistic alpha-blending of
/// the background-aligned object codes, then context injection.
ExpertResult overlap_expert_pair(Binder& bind, const ItbParams& p, Var z, Var code_a, Var code_b);

/// M-object generalization with a softmax gate. Needs M >= 2.
ExpertResult overlap_expert_multi(Binder& bind, const ItbParams& p, Var z, std::span<const Var> codes);

struct ItbOptions {
  BackgroundMode background = BackgroundMode::zero_residual;
  OverlapPath overlap = OverlapPath::automatic;
};

/// One interaction block on tokens z [hw, d]:
///   z'  = z + SelfAttn(z)
///   z'' = z' + m_bg*h_bg + sum_p m_p*h_p + m_ov*h_ov   (experts read z')
///   out = z'' + FFN(LN(z''))
/// `routing` must hold one exclusive mask per code at the token resolution and
/// satisfy the partition of unity; `report` receives the overlap gate (M >= 2).
Var itb_forward(Binder& bind, const ItbParams& p, Var z, std::span<const Var> codes, const RoutingMasks& routing,
                const ItbOptions& opts = {}, OverlapGateReport* report = nullptr);

/// Stage resolutions of an odd-depth U-shaped stack over an h x w token grid:
/// depth/2 pooling stages, one middle stage, depth/2 upsampling stages.
std::vector<std::pair<int, int>> stack_resolutions(int depth, int height, int width);

/// Runs blocks in U order with 2x2 average pooling on the way down, nearest
/// upsampling plus skip addition on the way up. routing[i] is for block i.
Var itb_stack_forward(Binder& bind, std::span<const ItbParams> blocks, Var z, int height, int width,
                      std::span<const Var> codes, std::span<const RoutingMasks> routing, const ItbOptions& opts = {},
                      std::vector<OverlapGateReport>* reports = nullptr);

}  // namespace pics
