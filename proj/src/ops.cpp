#include "pics/ops.hpp"

#include "pics/error.hpp"

#include <cmath>
#include <numbers>

namespace pics {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

Shape batch_dims(const Shape& s) { return Shape(s.begin(), s.end() - 2); }

Index product(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

// Broadcast two batch shapes (numpy rules, right-aligned).
Shape broadcast_batch(const Shape& a, const Shape& b) {
  const std::size_t n = std::max(a.size(), b.size());
  Shape out(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const Index da = i < n - a.size() ? 1 : a[i - (n - a.size())];
    const Index db = i < n - b.size() ? 1 : b[i - (n - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("matmul: batch dims not broadcastable " + shape_string(a) + " vs " + shape_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Flat index into `src` batch shape for output batch index `flat` of shape `out`.
Index broadcast_index(Index flat, const Shape& out, const Shape& src) {
  Index idx = 0;
  Index stride = 1;
  const std::size_t off = out.size() - src.size();
  for (std::size_t i = out.size(); i-- > 0;) {
    const Index coord = flat % out[i];
    flat /= out[i];
    if (i >= off) {
      const Index d = src[i - off];
      if (d != 1) idx += coord * stride;
      stride *= d;
    }
  }
  return idx;
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = a.tape();
  if (a.value().rank() < 2 || b.value().rank() < 2) throw ShapeError("matmul: operands need rank >= 2");
  const Index m = a.shape()[a.shape().size() - 2];
  const Index k = a.shape().back();
  const Index kb = b.shape()[b.shape().size() - 2];
  const Index n = b.shape().back();
  if (k != kb) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  if (a.value().rank() == 2 && b.value().rank() == 2) {
    Matrix out = a.mat() * b.mat();
    return tape.record(Tensor::from_matrix(std::move(out)), {a, b}, [a, b](Tape& t, const Matrix& g) {
      if (a.requires_grad()) t.accumulate(a, g * b.mat().transpose());
      if (b.requires_grad()) t.accumulate(b, a.mat().transpose() * g);
    });
  }
  const Shape ba = batch_dims(a.shape());
  const Shape bb = batch_dims(b.shape());
  const Shape bo = broadcast_batch(ba, bb);
  const Index batches = product(bo);
  Matrix out(batches * m, n);
  for (Index i = 0; i < batches; ++i) {
    const Index ia = broadcast_index(i, bo, ba);
    const Index ib = broadcast_index(i, bo, bb);
    out.middleRows(i * m, m).noalias() = a.mat().middleRows(ia * m, m) * b.mat().middleRows(ib * k, k);
  }
  Shape so = bo;
  so.push_back(m);
  so.push_back(n);
  return tape.record(Tensor(so, std::move(out)), {a, b}, [a, b, ba, bb, bo, batches, m, k](Tape& t, const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    Matrix gb = Matrix::Zero(b.rows(), b.cols());
    for (Index i = 0; i < batches; ++i) {
      const Index ia = broadcast_index(i, bo, ba);
      const Index ib = broadcast_index(i, bo, bb);
      const auto gi = g.middleRows(i * m, m);
      ga.middleRows(ia * m, m).noalias() += gi * b.mat().middleRows(ib * k, k).transpose();
      gb.middleRows(ib * k, k).noalias() += a.mat().middleRows(ia * m, m).transpose() * gi;
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

Var transpose(Var a) {
  if (a.value().rank() != 2) throw ShapeError("transpose: rank-2 tensor required");
  Matrix out = a.mat().transpose();
  return a.tape().record(Tensor::from_matrix(std::move(out)), {a},
                         [a](Tape& t, const Matrix& g) { t.accumulate(a, g.transpose()); });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Matrix out = a.mat() + b.mat();
  return a.tape().record(Tensor(a.shape(), std::move(out)), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Matrix out = a.mat() - b.mat();
  return a.tape().record(Tensor(a.shape(), std::move(out)), {a, b}, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (b.requires_grad()) t.accumulate(b, -g);
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Matrix out = a.mat().cwiseProduct(b.mat());
  return a.tape().record(Tensor(a.shape(), std::move(out)), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(b.mat()));
    if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.mat()));
  });
}

Var scale(Var a, double s) {
  Matrix out = a.mat() * s;
  return a.tape().record(Tensor(a.shape(), std::move(out)), {a},
                         [a, s](Tape& t, const Matrix& g) { t.accumulate(a, g * s); });
}

Var add_row(Var a, Var row) {
  if (row.value().size() != a.cols()) {
    throw ShapeError("add_row: row of size " + std::to_string(row.value().size()) + " vs last dim " +
                     std::to_string(a.cols()));
  }
  const Eigen::Map<const Eigen::RowVectorXd> r(row.mat().data(), a.cols());
  Matrix out = a.mat().rowwise() + r;
  return a.tape().record(Tensor(a.shape(), std::move(out)), {a, row}, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (row.requires_grad()) {
      Matrix gr = g.colwise().sum();
      t.accumulate(row, Eigen::Map<const Matrix>(gr.data(), row.rows(), row.cols()));
    }
  });
}

Var mul_rows(Var a, Var w) {
  if (w.value().size() != a.rows()) {
    throw ShapeError("mul_rows: weight count " + std::to_string(w.value().size()) + " vs rows " +
                     std::to_string(a.rows()));
  }
  const Eigen::Map<const Eigen::VectorXd> wv(w.mat().data(), a.rows());
  Matrix out = wv.asDiagonal() * a.mat();
  return a.tape().record(Tensor(a.shape(), std::move(out)), {a, w}, [a, w](Tape& t, const Matrix& g) {
    const Eigen::Map<const Eigen::VectorXd> wv(w.mat().data(), a.rows());
    if (a.requires_grad()) t.accumulate(a, wv.asDiagonal() * g);
    if (w.requires_grad()) {
      Eigen::VectorXd gw = g.cwiseProduct(a.mat()).rowwise().sum();
      t.accumulate(w, Eigen::Map<const Matrix>(gw.data(), w.rows(), w.cols()));
    }
  });
}

Var gelu(Var a) {
  Matrix out = a.mat().unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); });
  return a.tape().record(Tensor(a.shape(), std::move(out)), {a}, [a](Tape& t, const Matrix& g) {
    Matrix d = a.mat().unaryExpr([](double x) {
      return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
    });
    t.accumulate(a, g.cwiseProduct(d));
  });
}

Var sigmoid(Var a) {
  Matrix out = a.mat().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  Matrix saved = out;
  return a.tape().record(Tensor(a.shape(), std::move(out)), {a}, [a, y = std::move(saved)](Tape& t, const Matrix& g) {
    t.accumulate(a, g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var softmax(Var a, Index axis) {
  const Shape& s = a.shape();
  const Index rank = a.value().rank();
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("softmax: axis out of range for " + shape_string(s));
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (Index i = axis + 1; i < rank; ++i) inner *= s[static_cast<std::size_t>(i)];
  const Index len = s[static_cast<std::size_t>(axis)];

  Matrix out(a.rows(), a.cols());
  if (inner == 1) {
    const Index rows = outer;
    const Eigen::Map<const Matrix> x(a.mat().data(), rows, len);
    Eigen::Map<Matrix> y(out.data(), rows, len);
    y = (x.colwise() - x.rowwise().maxCoeff()).array().exp().matrix();
    y = (y.array().colwise() / y.rowwise().sum().array()).matrix();
  } else {
    const double* x = a.mat().data();
    double* y = out.data();
    for (Index o = 0; o < outer; ++o) {
      for (Index i = 0; i < inner; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Index l = 0; l < len; ++l) mx = std::max(mx, x[(o * len + l) * inner + i]);
        double total = 0.0;
        for (Index l = 0; l < len; ++l) {
          const Index at = (o * len + l) * inner + i;
          y[at] = std::exp(x[at] - mx);
          total += y[at];
        }
        for (Index l = 0; l < len; ++l) y[(o * len + l) * inner + i] /= total;
      }
    }
  }
  Matrix saved = out;
  return a.tape().record(Tensor(s, std::move(out)), {a}, [a, y = std::move(saved), outer, inner, len](Tape& t, const Matrix& g) {
    Matrix gi(y.rows(), y.cols());
    if (inner == 1) {
      const Eigen::Map<const Matrix> ym(y.data(), outer, len);
      const Eigen::Map<const Matrix> gm(g.data(), outer, len);
      Eigen::Map<Matrix> out(gi.data(), outer, len);
      const Eigen::VectorXd dot = gm.cwiseProduct(ym).rowwise().sum();
      out = ym.cwiseProduct((gm.colwise() - dot));
    } else {
      for (Index o = 0; o < outer; ++o) {
        for (Index i = 0; i < inner; ++i) {
          double dot = 0.0;
          for (Index l = 0; l < len; ++l) {
            const Index at = (o * len + l) * inner + i;
            dot += g.data()[at] * y.data()[at];
          }
          for (Index l = 0; l < len; ++l) {
            const Index at = (o * len + l) * inner + i;
            gi.data()[at] = y.data()[at] * (g.data()[at] - dot);
          }
        }
      }
    }
    t.accumulate(a, gi);
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Index d = x.cols();
  if (gain.value().size() != d || bias.value().size() != d) {
    throw ShapeError("layer_norm: gain/bias must have the size of the last dim");
  }
  const Eigen::VectorXd mu = x.mat().rowwise().mean();
  Matrix centered = x.mat().colwise() - mu;
  const Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(d)) + eps).rsqrt().matrix();
  Matrix xhat = inv_std.asDiagonal() * centered;
  const Eigen::Map<const Eigen::RowVectorXd> gv(gain.mat().data(), d);
  const Eigen::Map<const Eigen::RowVectorXd> bv(bias.mat().data(), d);
  Matrix out = (xhat.array().rowwise() * gv.array()).matrix().rowwise() + bv;
  return x.tape().record(
      Tensor(x.shape(), std::move(out)), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std, d](Tape& t, const Matrix& g) {
        const Eigen::Map<const Eigen::RowVectorXd> gv(gain.mat().data(), d);
        if (gain.requires_grad()) {
          Eigen::RowVectorXd gg = g.cwiseProduct(xhat).colwise().sum();
          t.accumulate(gain, Eigen::Map<const Matrix>(gg.data(), gain.rows(), gain.cols()));
        }
        if (bias.requires_grad()) {
          Eigen::RowVectorXd gb = g.colwise().sum();
          t.accumulate(bias, Eigen::Map<const Matrix>(gb.data(), bias.rows(), bias.cols()));
        }
        if (x.requires_grad()) {
          const Matrix dxhat = (g.array().rowwise() * gv.array()).matrix();
          const Eigen::VectorXd m1 = dxhat.rowwise().mean();
          const Eigen::VectorXd m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
          Matrix dx = dxhat.colwise() - m1;
          dx -= m2.asDiagonal() * xhat;
          t.accumulate(x, inv_std.asDiagonal() * dx);
        }
      });
}

Var attention(Var q, Var k, Var v) {
  if (q.value().rank() != 2 || k.value().rank() != 2 || v.value().rank() != 2) {
    throw ShapeError("attention: rank-2 operands required");
  }
  if (q.cols() != k.cols()) {
    throw ShapeError("attention: query dim " + std::to_string(q.cols()) + " vs key dim " + std::to_string(k.cols()));
  }
  if (k.rows() != v.rows()) throw ShapeError("attention: key/value counts differ");
  const double s = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix p = (q.mat() * k.mat().transpose()) * s;
  p = (p.colwise() - p.rowwise().maxCoeff()).array().exp().matrix();
  p = (p.array().colwise() / p.rowwise().sum().array()).matrix();
  Matrix out = p * v.mat();
  return q.tape().record(Tensor::from_matrix(std::move(out)), {q, k, v},
                         [q, k, v, p = std::move(p), s](Tape& t, const Matrix& g) {
                           if (v.requires_grad()) t.accumulate(v, p.transpose() * g);
                           if (!q.requires_grad() && !k.requires_grad()) return;
                           const Matrix dp = g * v.mat().transpose();
                           const Eigen::VectorXd dot = dp.cwiseProduct(p).rowwise().sum();
                           const Matrix ds = p.cwiseProduct(dp.colwise() - dot) * s;
                           if (q.requires_grad()) t.accumulate(q, ds * k.mat());
                           if (k.requires_grad()) t.accumulate(k, ds.transpose() * q.mat());
                         });
}

Var row_dot(Var a, Var b) {
  require_same_shape(a, b, "row_dot");
  Matrix out = a.mat().cwiseProduct(b.mat()).rowwise().sum();
  return a.tape().record(Tensor::from_matrix(std::move(out)), {a, b}, [a, b](Tape& t, const Matrix& g) {
    const Eigen::Map<const Eigen::VectorXd> gv(g.data(), g.rows());
    if (a.requires_grad()) t.accumulate(a, gv.asDiagonal() * b.mat());
    if (b.requires_grad()) t.accumulate(b, gv.asDiagonal() * a.mat());
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.mat();
    at += p.cols();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts.front().tape().record(Tensor::from_matrix(std::move(out)), parts, [ins](Tape& t, const Matrix& g) {
    Index at = 0;
    for (const Var& p : ins) {
      if (p.requires_grad()) t.accumulate(p, g.middleCols(at, p.cols()));
      at += p.cols();
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.mat();
    at += p.rows();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts.front().tape().record(Tensor::from_matrix(std::move(out)), parts, [ins](Tape& t, const Matrix& g) {
    Index at = 0;
    for (const Var& p : ins) {
      if (p.requires_grad()) t.accumulate(p, g.middleRows(at, p.rows()));
      at += p.rows();
    }
  });
}

Var column(Var a, Index j) {
  if (j < 0 || j >= a.cols()) throw ShapeError("column: index out of range");
  Matrix out = a.mat().col(j);
  return a.tape().record(Tensor::from_matrix(std::move(out)), {a}, [a, j](Tape& t, const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    ga.col(j) = g.col(0);
    t.accumulate(a, ga);
  });
}

Var sum(Var a) {
  return a.tape().record(Tensor::scalar(a.mat().sum()), {a}, [a](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return a.tape().record(Tensor::scalar(a.mat().mean()), {a}, [a, n](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / n));
  });
}

Var mse(Var a, Var b) {
  require_same_shape(a, b, "mse");
  Matrix diff = a.mat() - b.mat();
  const double n = static_cast<double>(diff.size());
  const double value = diff.squaredNorm() / n;
  return a.tape().record(Tensor::scalar(value), {a, b}, [a, b, diff = std::move(diff), n](Tape& t, const Matrix& g) {
    const double c = 2.0 * g(0, 0) / n;
    if (a.requires_grad()) t.accumulate(a, diff * c);
    if (b.requires_grad()) t.accumulate(b, diff * -c);
  });
}

Var avg_pool2(Var x, Index h, Index w) {
  if (x.rows() != h * w) throw ShapeError("avg_pool2: token count does not match grid");
  if (h % 2 || w % 2) throw ShapeError("avg_pool2: grid dims must be even");
  const Index ho = h / 2, wo = w / 2;
  Matrix out(ho * wo, x.cols());
  for (Index i = 0; i < ho; ++i) {
    for (Index j = 0; j < wo; ++j) {
      const Index r = 2 * i * w + 2 * j;
      out.row(i * wo + j) = 0.25 * (x.mat().row(r) + x.mat().row(r + 1) + x.mat().row(r + w) + x.mat().row(r + w + 1));
    }
  }
  return x.tape().record(Tensor::from_matrix(std::move(out)), {x}, [x, h, w, ho, wo](Tape& t, const Matrix& g) {
    (void)h;
    Matrix gx(x.rows(), x.cols());
    for (Index i = 0; i < ho; ++i) {
      for (Index j = 0; j < wo; ++j) {
        const Index r = 2 * i * w + 2 * j;
        const auto gr = 0.25 * g.row(i * wo + j);
        gx.row(r) = gr;
        gx.row(r + 1) = gr;
        gx.row(r + w) = gr;
        gx.row(r + w + 1) = gr;
      }
    }
    t.accumulate(x, gx);
  });
}

Var upsample2(Var x, Index h, Index w) {
  if (x.rows() != h * w) throw ShapeError("upsample2: token count does not match grid");
  const Index wo = 2 * w;
  Matrix out(4 * h * w, x.cols());
  for (Index i = 0; i < 2 * h; ++i) {
    for (Index j = 0; j < wo; ++j) out.row(i * wo + j) = x.mat().row((i / 2) * w + j / 2);
  }
  return x.tape().record(Tensor::from_matrix(std::move(out)), {x}, [x, h, w, wo](Tape& t, const Matrix& g) {
    Matrix gx = Matrix::Zero(x.rows(), x.cols());
    for (Index i = 0; i < 2 * h; ++i) {
      for (Index j = 0; j < wo; ++j) gx.row((i / 2) * w + j / 2) += g.row(i * wo + j);
    }
    t.accumulate(x, gx);
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x}, [x](Tape& t, const Matrix& g) {
    t.accumulate(x, Eigen::Map<const Matrix>(g.data(), x.rows(), x.cols()));
  });
}

}  // namespace pics
