#pragma once

#include "pics/tensor.hpp"

#include <span>

namespace pics {

// Differentiable primitives. Every function records one node on the tape of
// its inputs; all inputs must share a tape.

/// [.., m, k] x [.., k, n] -> [.., m, n]; leading (batch) dims broadcast.
Var matmul(Var a, Var b);
Var transpose(Var a);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);

/// a [.., d] + row [d]: the row is broadcast over every leading position.
Var add_row(Var a, Var row);
/// a [n, d] scaled row-wise by w [n, 1] (mask gating, per-location weights).
Var mul_rows(Var a, Var w);

Var gelu(Var a);
Var sigmoid(Var a);
Var softmax(Var a, Index axis = -1);

/// Per-position normalization over the last axis, then gain/bias [d].
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

/// Single-head scaled dot-product attention: softmax(q k^T / sqrt(d)) v.
/// q [n_q, d], k [n_k, d], v [n_k, d_v].
Var attention(Var q, Var k, Var v);

/// Row-wise inner product: [n, d] . [n, d] -> [n, 1].
Var row_dot(Var a, Var b);

Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var column(Var a, Index j);

Var sum(Var a);
Var mean(Var a);
/// mean((a - b)^2) over all elements.
Var mse(Var a, Var b);

/// Tokens laid out row-major on an h x w grid: 2x2 average pooling.
Var avg_pool2(Var x, Index h, Index w);
/// Nearest-neighbour 2x upsampling of tokens on an h x w grid.
Var upsample2(Var x, Index h, Index w);

Var reshape(Var x, Shape shape);

}  // namespace pics
