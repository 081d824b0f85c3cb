#include "pics/tensor.hpp"

#include "pics/error.hpp"

#include <numeric>
#include <sstream>

namespace pics {

namespace {

Index leading_product(const Shape& shape) {
  Index n = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) n *= shape[i];
  return n;
}

void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have rank >= 1");
  for (Index d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive: " + shape_string(shape));
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_shape(shape_);
  data_ = Matrix::Zero(leading_product(shape_), shape_.back());
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)) {
  check_shape(shape_);
  const Index rows = leading_product(shape_);
  if (static_cast<Index>(values.size()) != rows * shape_.back()) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_string(shape_));
  }
  data_ = Eigen::Map<const Matrix>(values.data(), rows, shape_.back());
}

Tensor::Tensor(Shape shape, Matrix data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.rows() != leading_product(shape_) || data_.cols() != shape_.back()) {
    throw ShapeError("matrix " + std::to_string(data_.rows()) + "x" + std::to_string(data_.cols()) +
                     " does not match shape " + shape_string(shape_));
  }
}

Tensor Tensor::from_matrix(Matrix m) {
  Shape s{m.rows(), m.cols()};
  return Tensor(std::move(s), std::move(m));
}

Tensor Tensor::scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return Tensor({1}, std::move(m));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> normal(0.0, stddev);
  for (double& v : t.values()) v = normal(rng);
  return t;
}

Tensor Tensor::constant(Shape shape, double v) {
  Tensor t(std::move(shape));
  t.data_.setConstant(v);
  return t;
}

Index Tensor::dim(Index axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) throw ShapeError("axis out of range for " + shape_string(shape_));
  return shape_[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_string(shape_));
  return data_(0, 0);
}

Tensor Tensor::reshaped(Shape shape) const {
  check_shape(shape);
  const Index total = std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
  if (total != size()) {
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  const Index rows = leading_product(shape);
  Matrix m = Eigen::Map<const Matrix>(data_.data(), rows, shape.back());
  return Tensor(std::move(shape), std::move(m));
}

Var Tape::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite value entering the tape");
  nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  if (!value.all_finite()) throw NumericError("non-finite value entering the tape");
  nodes_.push_back(Node{std::move(value), Matrix(), true, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backward backward) {
  if (!value.all_finite()) throw NumericError("operation produced a non-finite value");
  bool needs = false;
  for (const Var& in : inputs) {
    if (&in.tape() != this) throw std::logic_error("mixing vars from different tapes");
    needs = needs || in.requires_grad();
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr});
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var root) {
  if (root.value().size() != 1) {
    throw ShapeError("backward() needs a scalar root, got " + shape_string(root.shape()));
  }
  for (Node& n : nodes_) n.grad.resize(0, 0);
  Node& r = nodes_[root.id()];
  if (!r.requires_grad) return;
  r.grad = Matrix::Ones(r.value.rows(), r.value.cols());
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.size() == 0) continue;
    // The closure may touch other nodes; keep a copy of this node's gradient.
    const Matrix g = n.grad;
    n.backward(*this, g);
  }
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  accumulate<Matrix>(v, g);
}

Var Binder::operator()(const Tensor& param) {
  auto it = bound_.find(&param);
  if (it != bound_.end()) return it->second;
  Var v = track_ ? tape_.leaf(param) : tape_.constant(param);
  bound_.emplace(&param, v);
  return v;
}

void Binder::substitute(const Tensor& param, Var v) {
  if (v.shape() != param.shape()) throw ShapeError("Binder::substitute: shape mismatch");
  bound_[&param] = v;
}

Matrix Binder::grad(const Tensor& param) const {
  auto it = bound_.find(&param);
  if (it == bound_.end()) return Matrix::Zero(param.rows(), param.cols());
  return tape_.grad(it->second);
}

}  // namespace pics
