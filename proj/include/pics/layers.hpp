#pragma once

#include "pics/ops.hpp"
#include "pics/tensor.hpp"

#include <functional>
#include <string>

namespace pics {

/// x W + b. Weight is [d_in, d_out]; bias is [d_out] or empty.
struct LinearParams {
  Tensor weight;
  Tensor bias;

  static LinearParams init(Index d_in, Index d_out, Rng& rng, bool with_bias = true, double gain = 1.0);
  static LinearParams zeros(Index d_in, Index d_out, bool with_bias = true);

  bool has_bias() const { return bias.size() > 0; }
  Index in_dim() const { return weight.rows(); }
  Index out_dim() const { return weight.cols(); }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    if (has_bias()) f(prefix + ".bias", bias);
  }
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;

  static LayerNormParams identity(Index d);

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gain", gain);
    f(prefix + ".bias", bias);
  }
};

/// Linear -> GELU -> Linear with hidden width 4d.
struct FfnParams {
  LinearParams up;
  LinearParams down;

  static FfnParams init(Index d, Rng& rng);

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    up.visit(prefix + ".up", f);
    down.visit(prefix + ".down", f);
  }
};

Var linear(Binder& bind, const LinearParams& p, Var x);
Var layer_norm(Binder& bind, const LayerNormParams& p, Var x, double eps = 1e-5);
Var ffn(Binder& bind, const FfnParams& p, Var x);

/// softmax(Q K^T / sqrt(d)) V, single head.
inline Var cross_attention(Var q, Var k, Var v) { return attention(q, k, v); }

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  Index worst_index = -1;
  double max_abs_analytic = 0.0;
  double max_abs_numeric = 0.0;
};

/// Scalar-valued function of one tensor, built on the provided tape.
using ScalarFn = std::function<Var(Tape&, Var)>;

/// Compares the reverse-mode gradient of f at x with central differences
/// (f(x+h) - f(x-h)) / 2h, coordinate by coordinate. The relative error of a
/// coordinate is |g - n| / max(|g|, |n|, 1e-6 * max_j |n_j|, 1e-12).
GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double step = 1e-5);

}  // namespace pics
