#include "pics/layers.hpp"

#include "pics/error.hpp"

#include <algorithm>
#include <cmath>

namespace pics {

LinearParams LinearParams::init(Index d_in, Index d_out, Rng& rng, bool with_bias, double gain) {
  LinearParams p;
  p.weight = Tensor::randn({d_in, d_out}, rng, gain / std::sqrt(static_cast<double>(d_in)));
  if (with_bias) p.bias = Tensor({d_out});
  return p;
}

LinearParams LinearParams::zeros(Index d_in, Index d_out, bool with_bias) {
  LinearParams p;
  p.weight = Tensor({d_in, d_out});
  if (with_bias) p.bias = Tensor({d_out});
  return p;
}

LayerNormParams LayerNormParams::identity(Index d) {
  return LayerNormParams{Tensor::constant({d}, 1.0), Tensor({d})};
}

FfnParams FfnParams::init(Index d, Rng& rng) {
  return FfnParams{LinearParams::init(d, 4 * d, rng), LinearParams::init(4 * d, d, rng)};
}

Var linear(Binder& bind, const LinearParams& p, Var x) {
  if (x.cols() != p.in_dim()) {
    throw ShapeError("linear: input dim " + std::to_string(x.cols()) + " vs weight " +
                     shape_string(p.weight.shape()));
  }
  Var y = x.value().rank() == 2 ? matmul(x, bind(p.weight))
                                : reshape(matmul(reshape(x, {x.rows(), x.cols()}), bind(p.weight)),
                                          [&] {
                                            Shape s = x.shape();
                                            s.back() = p.out_dim();
                                            return s;
                                          }());
  return p.has_bias() ? add_row(y, bind(p.bias)) : y;
}

Var layer_norm(Binder& bind, const LayerNormParams& p, Var x, double eps) {
  return layer_norm(x, bind(p.gain), bind(p.bias), eps);
}

Var ffn(Binder& bind, const FfnParams& p, Var x) {
  return linear(bind, p.down, gelu(linear(bind, p.up, x)));
}

GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double step) {
  Matrix analytic;
  {
    Tape tape;
    Var in = tape.leaf(x);
    Var out = f(tape, in);
    if (out.value().size() != 1) throw ShapeError("grad_check: f must return a scalar");
    tape.backward(out);
    analytic = tape.grad(in);
  }
  auto eval = [&](const Tensor& at) {
    Tape tape;
    return f(tape, tape.constant(at)).value().item();
  };
  Matrix numeric(x.rows(), x.cols());
  Tensor probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double orig = x.values()[static_cast<std::size_t>(i)];
    probe.values()[static_cast<std::size_t>(i)] = orig + step;
    const double fp = eval(probe);
    probe.values()[static_cast<std::size_t>(i)] = orig - step;
    const double fm = eval(probe);
    probe.values()[static_cast<std::size_t>(i)] = orig;
    numeric.data()[i] = (fp - fm) / (2.0 * step);
  }
  const double floor = std::max(1e-6 * numeric.cwiseAbs().maxCoeff(), 1e-12);
  GradCheckResult r;
  r.max_abs_analytic = analytic.cwiseAbs().maxCoeff();
  r.max_abs_numeric = numeric.cwiseAbs().maxCoeff();
  for (Index i = 0; i < x.size(); ++i) {
    const double a = analytic.data()[i];
    const double n = numeric.data()[i];
    const double abs_err = std::abs(a - n);
    const double rel = abs_err / std::max({std::abs(a), std::abs(n), floor});
    r.max_abs_error = std::max(r.max_abs_error, abs_err);
    if (rel > r.max_rel_error || r.worst_index < 0) {
      r.max_rel_error = rel;
      r.worst_index = i;
    }
  }
  return r;
}

}  // namespace pics
