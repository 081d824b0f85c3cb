#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace pics {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Shape = std::vector<Index>;
using Rng = std::mt19937_64;

std::string shape_string(const Shape& shape);

/// Dense row-major value. Storage is a 2-D view: rows = product of the leading
/// dimensions, cols = the last dimension. A rank-1 tensor is a single row.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);
  Tensor(Shape shape, Matrix data);

  static Tensor from_matrix(Matrix m);
  static Tensor scalar(double v);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
  static Tensor constant(Shape shape, double v);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  Index rows() const { return data_.rows(); }
  Index cols() const { return data_.cols(); }
  Index dim(Index axis) const;

  const Matrix& matrix() const { return data_; }
  Matrix& matrix() { return data_; }
  std::span<const double> values() const { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<double> values() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }

  double item() const;
  Tensor reshaped(Shape shape) const;
  bool all_finite() const { return data_.allFinite(); }

 private:
  Shape shape_;
  Matrix data_;
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Matrix& mat() const { return value().matrix(); }
  const Shape& shape() const { return value().shape(); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode trace. One forward pass records nodes in topological order;
/// backward() walks them in reverse and accumulates gradients. A tape is owned
/// by a single thread; independent tapes may run concurrently.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);

  /// Records an op result. `backward` is dropped when no input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, std::span<const Var> inputs, Backward backward);

  void backward(Var root);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Gradient of the last backward() root w.r.t. `v`; zeros when unreachable.
  Matrix grad(Var v) const;

  /// Adds `g` into the gradient slot of `v` (no-op for constants).
  void accumulate(const Var& v, const Matrix& g);
  template <typename Derived>
  void accumulate(const Var& v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

/// Binds parameter tensors into a tape as tracked leaves, keyed by address,
/// so a model's parameters are recorded once per forward pass.
class Binder {
 public:
  explicit Binder(Tape& tape, bool track = true) : tape_(tape), track_(track) {}

  Var operator()(const Tensor& param);
  /// Makes later binds of `param` return `v` (which must match its shape).
  void substitute(const Tensor& param, Var v);
  Tape& tape() const { return tape_; }
  bool tracking() const { return track_; }

  /// Gradient w.r.t. a bound parameter after backward(); zeros if never bound.
  Matrix grad(const Tensor& param) const;

 private:
  Tape& tape_;
  bool track_;
  std::unordered_map<const Tensor*, Var> bound_;
};

}  // namespace pics
