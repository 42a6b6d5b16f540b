#include "emo/autodiff.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <utility>

#include "emo/errors.hpp"
#include "emo/rotation.hpp"

namespace emo::ad {

namespace {

std::atomic<bool> g_tanh_fault{false};

std::string shape_of(const Matrix& m) {
  std::ostringstream os;
  os << "[" << m.rows() << "x" << m.cols() << "]";
  return os.str();
}

Tape& tape_of(const Tensor& a) {
  if (!a.attached()) throw ContractError("tensor is not attached to a tape");
  return *a.tape();
}

Tape& tape_of(const Tensor& a, const Tensor& b) {
  Tape& t = tape_of(a);
  if (b.tape() != &t) throw ContractError("operands live on different tapes");
  return t;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
}

enum class Binary { add, sub, mul };

Tensor binary(Binary op, const char* name, const Tensor& a, const Tensor& b) {
  Tape& tape = tape_of(a, b);
  const Matrix& x = a.value();
  const Matrix& y = b.value();
  const bool same = x.rows() == y.rows() && x.cols() == y.cols();
  const bool a_scalar = !same && x.size() == 1;
  const bool b_scalar = !same && y.size() == 1;
  if (!same && !a_scalar && !b_scalar) require_same_shape(name, a, b);

  Matrix out;
  if (same) {
    switch (op) {
      case Binary::add: out = x + y; break;
      case Binary::sub: out = x - y; break;
      case Binary::mul: out = x.cwiseProduct(y); break;
    }
  } else if (a_scalar) {
    const double s = x(0, 0);
    switch (op) {
      case Binary::add: out = (s + y.array()).matrix(); break;
      case Binary::sub: out = (s - y.array()).matrix(); break;
      case Binary::mul: out = s * y; break;
    }
  } else {
    const double s = y(0, 0);
    switch (op) {
      case Binary::add: out = (x.array() + s).matrix(); break;
      case Binary::sub: out = (x.array() - s).matrix(); break;
      case Binary::mul: out = x * s; break;
    }
  }

  return tape.record(std::move(out), {a, b}, [a, b, op, a_scalar, b_scalar](Tape& t, const Matrix&, const Matrix& g) {
    auto reduce_to = [&](const Tensor& target, bool is_scalar, const Matrix& full) {
      if (is_scalar) {
        t.accumulate(target, Matrix::Constant(1, 1, full.sum()));
      } else {
        t.accumulate(target, full);
      }
    };
    switch (op) {
      case Binary::add:
        reduce_to(a, a_scalar, g);
        reduce_to(b, b_scalar, g);
        break;
      case Binary::sub:
        reduce_to(a, a_scalar, g);
        reduce_to(b, b_scalar, Matrix(-g));
        break;
      case Binary::mul: {
        const Matrix& x = a.value();
        const Matrix& y = b.value();
        if (a_scalar) {
          reduce_to(a, true, Matrix(g.cwiseProduct(y)));
          t.accumulate(b, g * x(0, 0));
        } else if (b_scalar) {
          t.accumulate(a, g * y(0, 0));
          reduce_to(b, true, Matrix(g.cwiseProduct(x)));
        } else {
          t.accumulate(a, g.cwiseProduct(y));
          t.accumulate(b, g.cwiseProduct(x));
        }
        break;
      }
    }
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor / Tape

const Matrix& Tensor::value() const {
  if (!tape_) throw ContractError("tensor is not attached to a tape");
  return tape_->nodes_[id_].value;
}

Matrix Tensor::grad() const {
  const auto& node = tape_->nodes_[id_];
  if (node.grad.size() == 0) return Matrix::Zero(node.value.rows(), node.value.cols());
  return node.grad;
}

bool Tensor::requires_grad() const { return tape_ && tape_->nodes_[id_].requires_grad; }

double Tensor::item() const {
  if (!is_scalar()) throw ContractError("item() on non-scalar tensor " + shape_string());
  return value()(0, 0);
}

std::string Tensor::shape_string() const { return shape_of(value()); }

Tensor Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), true, nullptr});
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), false, nullptr});
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::scalar(double value, bool requires_grad) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return requires_grad ? variable(std::move(m)) : constant(std::move(m));
}

Tensor Tape::record(Matrix value, std::initializer_list<Tensor> inputs, BackwardFn backward) {
  bool needs = false;
  for (const Tensor& in : inputs) {
    if (in.tape() != this) throw ContractError("op input recorded on a different tape");
    needs = needs || nodes_[in.id()].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), Matrix(), needs, needs ? std::move(backward) : nullptr});
  return Tensor(this, nodes_.size() - 1);
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape() != this) throw ContractError("backward: loss is detached from this tape");
  if (!loss.is_scalar()) throw ContractError("backward: loss must be scalar, got " + loss.shape_string());
  if (backward_done_) throw ContractError("backward: already run on this tape; record a new tape");
  backward_done_ = true;
  Node& root = nodes_[loss.id()];
  if (!root.requires_grad) return;
  root.grad = Matrix::Ones(1, 1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || node.grad.size() == 0) continue;
    node.backward(*this, node.value, node.grad);
  }
}

// ---------------------------------------------------------------------------
// Ops

Matrix rowwise_product(const Matrix& a, const Matrix& b) {
  const Index n = a.rows();
  const Index k = a.cols();
  const Index m = b.cols();
  Matrix c = Matrix::Zero(n, m);
  for (Index i = 0; i < n; ++i) {
    double* crow = c.row(i).data();
    for (Index j = 0; j < k; ++j) {
      const double s = a(i, j);
      const double* brow = b.row(j).data();
      for (Index col = 0; col < m; ++col) crow[col] += s * brow[col];
    }
  }
  return c;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& tape = tape_of(a, b);
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ " + a.shape_string() + " x " + b.shape_string());
  }
  return tape.record(rowwise_product(a.value(), b.value()), {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(Binary::add, "add", a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(Binary::sub, "sub", a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(Binary::mul, "mul", a, b); }

Tensor scale(const Tensor& a, double factor) {
  Tape& tape = tape_of(a);
  return tape.record(a.value() * factor, {a}, [a, factor](Tape& t, const Matrix&, const Matrix& g) { t.accumulate(a, g * factor); });
}

Tensor tanh(const Tensor& x) {
  Tape& tape = tape_of(x);
  Matrix y = x.value().array().tanh().matrix();
  return tape.record(std::move(y), {x}, [x](Tape& t, const Matrix& y, const Matrix& g) {
    if (g_tanh_fault.load(std::memory_order_relaxed)) {
      t.accumulate(x, (g.array() * (1.0 + y.array().square())).matrix());
    } else {
      t.accumulate(x, (g.array() * (1.0 - y.array().square())).matrix());
    }
  });
}

Tensor relu(const Tensor& x) {
  Tape& tape = tape_of(x);
  return tape.record(x.value().cwiseMax(0.0), {x}, [x](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(x, (x.value().array() > 0.0).select(g, 0.0));
  });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  Tape& tape = tape_of(x);
  return tape.record(x.value().cwiseMax(lo).cwiseMin(hi), {x}, [x, lo, hi](Tape& t, const Matrix&, const Matrix& g) {
    const auto& v = x.value().array();
    t.accumulate(x, ((v > lo) && (v < hi)).select(g, 0.0));
  });
}

Tensor add_rowwise(const Tensor& a, const Tensor& row) {
  Tape& tape = tape_of(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_rowwise: row " + row.shape_string() + " does not match " + a.shape_string());
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return tape.record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(a, g);
    if (row.requires_grad()) t.accumulate(row, g.colwise().sum());
  });
}

Tensor mul_rowwise(const Tensor& a, const Tensor& row) {
  Tape& tape = tape_of(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("mul_rowwise: row " + row.shape_string() + " does not match " + a.shape_string());
  }
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return tape.record(std::move(out), {a, row}, [a, row](Tape& t, const Matrix&, const Matrix& g) {
    if (a.requires_grad()) t.accumulate(a, (g.array().rowwise() * row.value().row(0).array()).matrix());
    if (row.requires_grad()) t.accumulate(row, g.cwiseProduct(a.value()).colwise().sum());
  });
}

Tensor softmax_rows(const Tensor& x) {
  Tape& tape = tape_of(x);
  const Matrix& v = x.value();
  Matrix y(v.rows(), v.cols());
  for (Index i = 0; i < v.rows(); ++i) {
    const double m = v.row(i).maxCoeff();
    y.row(i) = (v.row(i).array() - m).exp().matrix();
    y.row(i) /= y.row(i).sum();
  }
  return tape.record(std::move(y), {x}, [x](Tape& t, const Matrix& y, const Matrix& g) {
    Matrix gx(y.rows(), y.cols());
    for (Index i = 0; i < y.rows(); ++i) {
      const double dot = g.row(i).dot(y.row(i));
      gx.row(i) = y.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
    }
    t.accumulate(x, gx);
  });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  Tape& tape = tape_of(x, gamma);
  tape_of(x, beta);
  const Index n = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n) {
    throw DimensionError("layer_norm_rows: scale/shift " + gamma.shape_string() + "/" + beta.shape_string() +
                         " do not match " + x.shape_string());
  }
  const Matrix& v = x.value();
  Matrix xhat(v.rows(), n);
  Eigen::VectorXd inv_std(v.rows());
  for (Index i = 0; i < v.rows(); ++i) {
    const double mu = v.row(i).mean();
    const double var = (v.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (v.row(i).array() - mu) * inv_std(i);
  }
  Matrix y = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  return tape.record(std::move(y), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std](Tape& t, const Matrix&, const Matrix& g) {
    const Index cols = xhat.cols();
    if (gamma.requires_grad()) t.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
    if (beta.requires_grad()) t.accumulate(beta, g.colwise().sum());
    if (!x.requires_grad()) return;
    Matrix gxhat = g.array().rowwise() * gamma.value().row(0).array();
    Matrix gx(xhat.rows(), cols);
    for (Index i = 0; i < xhat.rows(); ++i) {
      const double s1 = gxhat.row(i).sum();
      const double s2 = gxhat.row(i).dot(xhat.row(i));
      gx.row(i) = (inv_std(i) / static_cast<double>(cols)) *
                  (static_cast<double>(cols) * gxhat.row(i).array() - s1 - xhat.row(i).array() * s2).matrix();
    }
    t.accumulate(x, gx);
  });
}

Tensor reduce(Reduction op, const Tensor& x) {
  Tape& tape = tape_of(x);
  const Matrix& v = x.value();
  if (v.size() == 0) throw DomainError("reduce: empty tensor " + x.shape_string());
  double r = 0.0;
  switch (op) {
    case Reduction::sum: r = v.sum(); break;
    case Reduction::mean: r = v.sum() / static_cast<double>(v.size()); break;
    case Reduction::sumsq: r = v.squaredNorm(); break;
  }
  return tape.record(Matrix::Constant(1, 1, r), {x}, [x, op](Tape& t, const Matrix&, const Matrix& g) {
    const double up = g(0, 0);
    const Matrix& v = x.value();
    switch (op) {
      case Reduction::sum: t.accumulate(x, Matrix::Constant(v.rows(), v.cols(), up)); break;
      case Reduction::mean: t.accumulate(x, Matrix::Constant(v.rows(), v.cols(), up / static_cast<double>(v.size()))); break;
      case Reduction::sumsq: t.accumulate(x, v * (2.0 * up)); break;
    }
  });
}

Tensor transpose(const Tensor& x) {
  Tape& tape = tape_of(x);
  return tape.record(x.value().transpose(), {x}, [x](Tape& t, const Matrix&, const Matrix& g) { t.accumulate(x, g.transpose()); });
}

Tensor reshape(const Tensor& x, Index rows, Index cols) {
  Tape& tape = tape_of(x);
  if (rows * cols != x.size()) {
    throw DimensionError("reshape: cannot view " + x.shape_string() + " as [" + std::to_string(rows) + "x" + std::to_string(cols) + "]");
  }
  Matrix out = Eigen::Map<const Matrix>(x.value().data(), rows, cols);
  return tape.record(std::move(out), {x}, [x](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(x, Eigen::Map<const Matrix>(g.data(), x.rows(), x.cols()));
  });
}

Tensor concat_rows(const Tensor& top, const Tensor& bottom) {
  Tape& tape = tape_of(top, bottom);
  if (top.cols() != bottom.cols()) {
    throw DimensionError("concat_rows: widths differ " + top.shape_string() + " vs " + bottom.shape_string());
  }
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out << top.value(), bottom.value();
  return tape.record(std::move(out), {top, bottom}, [top, bottom](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(top, g.topRows(top.rows()));
    t.accumulate(bottom, g.bottomRows(bottom.rows()));
  });
}

Tensor concat_cols(const Tensor& left, const Tensor& right) {
  Tape& tape = tape_of(left, right);
  if (left.rows() != right.rows()) {
    throw DimensionError("concat_cols: heights differ " + left.shape_string() + " vs " + right.shape_string());
  }
  Matrix out(left.rows(), left.cols() + right.cols());
  out << left.value(), right.value();
  return tape.record(std::move(out), {left, right}, [left, right](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(left, g.leftCols(left.cols()));
    t.accumulate(right, g.rightCols(right.cols()));
  });
}

Tensor slice_rows(const Tensor& x, Index start, Index count) {
  Tape& tape = tape_of(x);
  if (start < 0 || count < 1 || start + count > x.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) + ") out of " + x.shape_string());
  }
  return tape.record(x.value().middleRows(start, count), {x}, [x, start, count](Tape& t, const Matrix&, const Matrix& g) {
    Matrix full = Matrix::Zero(x.rows(), x.cols());
    full.middleRows(start, count) = g;
    t.accumulate(x, full);
  });
}

Tensor slice_cols(const Tensor& x, Index start, Index count) {
  Tape& tape = tape_of(x);
  if (start < 0 || count < 1 || start + count > x.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) + ") out of " + x.shape_string());
  }
  return tape.record(x.value().middleCols(start, count), {x}, [x, start, count](Tape& t, const Matrix&, const Matrix& g) {
    Matrix full = Matrix::Zero(x.rows(), x.cols());
    full.middleCols(start, count) = g;
    t.accumulate(x, full);
  });
}

Tensor gather_rows(const Tensor& x, std::span<const int> index, double fill) {
  Tape& tape = tape_of(x);
  const Index rows = static_cast<Index>(index.size());
  Matrix out(rows, x.cols());
  for (Index i = 0; i < rows; ++i) {
    const int src = index[static_cast<std::size_t>(i)];
    if (src >= x.rows()) throw DimensionError("gather_rows: index " + std::to_string(src) + " out of " + x.shape_string());
    if (src < 0) {
      out.row(i).setConstant(fill);
    } else {
      out.row(i) = x.value().row(src);
    }
  }
  std::vector<int> idx(index.begin(), index.end());
  return tape.record(std::move(out), {x}, [x, idx = std::move(idx)](Tape& t, const Matrix&, const Matrix& g) {
    Matrix gx = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= 0) gx.row(idx[i]) += g.row(static_cast<Index>(i));
    }
    t.accumulate(x, gx);
  });
}

Tensor rodrigues(const Tensor& axis_angle) {
  Tape& tape = tape_of(axis_angle);
  if (axis_angle.size() != 3) throw DimensionError("rodrigues: expected 3 entries, got " + axis_angle.shape_string());
  const double* src = axis_angle.value().data();
  const Eigen::Vector3d w(src[0], src[1], src[2]);
  Matrix r = emo::rodrigues(w);
  return tape.record(std::move(r), {axis_angle}, [axis_angle, w](Tape& t, const Matrix&, const Matrix& g) {
    const auto jac = emo::rodrigues_jacobian(w);
    Matrix gw(axis_angle.rows(), axis_angle.cols());
    for (int i = 0; i < 3; ++i) gw.data()[i] = g.cwiseProduct(jac[static_cast<std::size_t>(i)]).sum();
    t.accumulate(axis_angle, gw);
  });
}

namespace testing {
void set_tanh_adjoint_fault(bool enabled) { g_tanh_fault.store(enabled, std::memory_order_relaxed); }
}  // namespace testing

}  // namespace emo::ad
