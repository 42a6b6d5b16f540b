#pragma once

// Dense double-precision tensors with a reverse-mode tape.
//
// A Tape owns every value computed in one forward pass. Tensors are cheap
// handles (tape pointer + node index); recorded values never change. Ops are
// free functions that append a node and, when any input requires a gradient,
// the closure that propagates the adjoint back to the inputs.

#include <Eigen/Core>

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace emo::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

class Tape;

class Tensor {
 public:
  Tensor() = default;

  const Matrix& value() const;
  /// Accumulated gradient; zeros if nothing reached this tensor.
  Matrix grad() const;
  bool requires_grad() const;

  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Index size() const { return value().size(); }
  bool is_scalar() const { return rows() == 1 && cols() == 1; }
  double item() const;
  std::string shape_string() const;

  bool attached() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the node's forward value and its accumulated output gradient.
  using BackwardFn = std::function<void(Tape&, const Matrix& value, const Matrix& grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor variable(Matrix value);
  Tensor constant(Matrix value);
  Tensor scalar(double value, bool requires_grad = false);

  /// Seeds d(loss)/d(loss) = 1 and visits the records in reverse order.
  /// Throws ContractError for a non-scalar or foreign loss, or on a second call.
  void backward(const Tensor& loss);
  bool backward_done() const { return backward_done_; }

  std::size_t size() const { return nodes_.size(); }

  // Op-implementation interface.
  Tensor record(Matrix value, std::initializer_list<Tensor> inputs, BackwardFn backward);
  template <typename Derived>
  void accumulate(const Tensor& target, const Eigen::MatrixBase<Derived>& g) {
    Node& node = nodes_[target.id_];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0) {
      node.grad = g;
    } else {
      node.grad += g;
    }
  }

 private:
  friend class Tensor;
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

// Matrix product. Each output row accumulates in a fixed order that does not
// depend on how many rows are batched together.
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise. Shapes must match exactly, except that either side of
// add/sub/mul may be a 1x1 scalar.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor tanh(const Tensor& x);
Tensor relu(const Tensor& x);
/// Pass-through gradient strictly inside (lo, hi), zero outside.
Tensor clamp(const Tensor& x, double lo, double hi);

// Explicit row broadcasts: out(i, j) = a(i, j) op r(0, j).
Tensor add_rowwise(const Tensor& a, const Tensor& row);
Tensor mul_rowwise(const Tensor& a, const Tensor& row);

Tensor softmax_rows(const Tensor& x);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

enum class Reduction { sum, mean, sumsq };
Tensor reduce(Reduction op, const Tensor& x);
inline Tensor sum(const Tensor& x) { return reduce(Reduction::sum, x); }
inline Tensor mean(const Tensor& x) { return reduce(Reduction::mean, x); }
inline Tensor sumsq(const Tensor& x) { return reduce(Reduction::sumsq, x); }

Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Index rows, Index cols);
Tensor concat_rows(const Tensor& top, const Tensor& bottom);
Tensor concat_cols(const Tensor& left, const Tensor& right);
Tensor slice_rows(const Tensor& x, Index start, Index count);
Tensor slice_cols(const Tensor& x, Index start, Index count);

/// out.row(i) = x.row(index[i]), or `fill` in every column where index[i] < 0.
Tensor gather_rows(const Tensor& x, std::span<const int> index, double fill);

/// Axis-angle (3 entries, any orientation) to a 3x3 rotation matrix.
Tensor rodrigues(const Tensor& axis_angle);

/// Plain matrix product with the same per-row accumulation order as matmul().
Matrix rowwise_product(const Matrix& a, const Matrix& b);

namespace testing {
/// Corrupts the tanh adjoint; used to check that gradient checking catches it.
void set_tanh_adjoint_fault(bool enabled);
}  // namespace testing

}  // namespace emo::ad

namespace emo {
using Matrix = ad::Matrix;
using Eigen::Index;
using Eigen::Vector3d;
using Eigen::VectorXd;
}  // namespace emo
