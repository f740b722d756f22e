#include "hatl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hatl::ad {

Tape::Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<Var>(nodes_.size() - 1);
}

const Matrix& Tape::value(Var v) const {
  const Node& n = nodes_[v];
  return n.param ? n.param->value : n.value;
}

Tape::Var Tape::param(Param& p) {
  Node n{.op = Op::Param};
  n.param = &p;
  n.needs_grad = record_ && p.trainable;
  return push(std::move(n));
}

Tape::Var Tape::constant(Matrix m) {
  Node n{.op = Op::Constant};
  n.value = std::move(m);
  return push(std::move(n));
}

Tape::Var Tape::matmul(Var a, Var b) {
  if (value(a).cols() != value(b).rows()) throw std::invalid_argument("matmul: shape mismatch");
  Node n{.op = Op::MatMul, .a = a, .b = b};
  n.value.noalias() = value(a) * value(b);
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(n));
}

Tape::Var Tape::matmul_nt(Var a, Var b) {
  if (value(a).cols() != value(b).cols()) throw std::invalid_argument("matmul_nt: shape mismatch");
  Node n{.op = Op::MatMulNT, .a = a, .b = b};
  n.value.noalias() = value(a) * value(b).transpose();
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(n));
}

Tape::Var Tape::add(Var a, Var b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw std::invalid_argument("add: shape mismatch");
  Node n{.op = Op::Add, .a = a, .b = b};
  n.value = value(a) + value(b);
  n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;
  return push(std::move(n));
}

Tape::Var Tape::add_row(Var a, Var row) {
  if (value(row).rows() != 1 || value(row).cols() != value(a).cols())
    throw std::invalid_argument("add_row: shape mismatch");
  Node n{.op = Op::AddRow, .a = a, .b = row};
  n.value = value(a).rowwise() + value(row).row(0);
  n.needs_grad = nodes_[a].needs_grad || nodes_[row].needs_grad;
  return push(std::move(n));
}

Tape::Var Tape::tanh(Var a) {
  Node n{.op = Op::Tanh, .a = a};
  n.value = value(a).array().tanh().matrix();
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

Tape::Var Tape::scale(Var a, double s) {
  Node n{.op = Op::Scale, .a = a, .s = s};
  n.value = value(a) * s;
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

Tape::Var Tape::shift_rows(Var a, int offset) {
  const Matrix& x = value(a);
  Node n{.op = Op::Shift, .a = a, .offset = offset};
  n.value = Matrix::Zero(x.rows(), x.cols());
  const Eigen::Index rows = x.rows();
  for (Eigen::Index g = 0; g < rows; ++g)
    n.value.row(g) = x.row(std::clamp<Eigen::Index>(g - offset, 0, rows - 1));
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

Tape::Var Tape::gather_rows(Var table, std::vector<int> ids) {
  const Matrix& t = value(table);
  Node n{.op = Op::Gather, .a = table};
  n.value.resize(static_cast<Eigen::Index>(ids.size()), t.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= t.rows()) throw std::out_of_range("gather_rows: id out of range");
    n.value.row(static_cast<Eigen::Index>(i)) = t.row(ids[i]);
  }
  n.ids = std::move(ids);
  n.needs_grad = nodes_[table].needs_grad;
  return push(std::move(n));
}

Tape::Var Tape::softmax_rows(Var a, bool causal) {
  const Matrix& x = value(a);
  Node n{.op = Op::Softmax, .a = a, .causal = causal};
  n.value = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Eigen::Index width = causal ? std::min<Eigen::Index>(r + 1, x.cols()) : x.cols();
    auto in = x.row(r).head(width);
    const double m = in.maxCoeff();
    auto e = (in.array() - m).exp();
    n.value.row(r).head(width) = e / e.sum();
  }
  n.needs_grad = nodes_[a].needs_grad;
  return push(std::move(n));
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

void Tape::seed(Var v, const Matrix& g) {
  if (g.rows() != value(v).rows() || g.cols() != value(v).cols())
    throw std::invalid_argument("seed: gradient shape mismatch");
  accumulate(v, g);
}

void Tape::backward() {
  for (Var v = static_cast<Var>(nodes_.size()) - 1; v >= 0; --v) {
    Node& n = nodes_[v];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    const Matrix& g = n.grad;
    switch (n.op) {
      case Op::Param:
        if (n.param->grad.size() == 0)
          n.param->grad = g;
        else
          n.param->grad += g;
        break;
      case Op::Constant:
        break;
      case Op::MatMul:
        if (nodes_[n.a].needs_grad) accumulate(n.a, g * value(n.b).transpose());
        if (nodes_[n.b].needs_grad) accumulate(n.b, value(n.a).transpose() * g);
        break;
      case Op::MatMulNT:
        if (nodes_[n.a].needs_grad) accumulate(n.a, g * value(n.b));
        if (nodes_[n.b].needs_grad) accumulate(n.b, g.transpose() * value(n.a));
        break;
      case Op::Add:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      case Op::AddRow:
        accumulate(n.a, g);
        if (nodes_[n.b].needs_grad) accumulate(n.b, g.colwise().sum());
        break;
      case Op::Tanh:
        accumulate(n.a, (g.array() * (1.0 - n.value.array().square())).matrix());
        break;
      case Op::Scale:
        accumulate(n.a, g * n.s);
        break;
      case Op::Shift: {
        Matrix d = Matrix::Zero(g.rows(), g.cols());
        for (Eigen::Index r = 0; r < g.rows(); ++r)
          d.row(std::clamp<Eigen::Index>(r - n.offset, 0, g.rows() - 1)) += g.row(r);
        accumulate(n.a, d);
        break;
      }
      case Op::Gather: {
        Matrix d = Matrix::Zero(value(n.a).rows(), value(n.a).cols());
        for (std::size_t i = 0; i < n.ids.size(); ++i)
          d.row(n.ids[i]) += g.row(static_cast<Eigen::Index>(i));
        accumulate(n.a, d);
        break;
      }
      case Op::Softmax: {
        const Matrix& y = n.value;
        const Eigen::VectorXd dots = (g.array() * y.array()).rowwise().sum();
        Matrix d = (y.array() * (g.colwise() - dots).array()).matrix();
        accumulate(n.a, d);
        break;
      }
    }
  }
}

}  // namespace hatl::ad
