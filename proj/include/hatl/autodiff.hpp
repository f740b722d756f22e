#pragma once

// Minimal reverse-mode differentiation over dense matrices. A Tape records
// one forward pass; seeding output gradients and calling backward()
// accumulates d(loss)/d(param) into every trainable Param touched.

#include <string>
#include <vector>

#include "hatl/types.hpp"

namespace hatl::ad {

enum class LrClass { Backbone, Encoder, Decoder };

// A named parameter matrix. `group` is the layer tag: 0 for the translation
// model, m in 1..n for backbone layer L_m.
struct Param {
  std::string name;
  int group = 0;
  LrClass lr_class = LrClass::Decoder;
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Eigen::Index size() const { return value.size(); }
};

class Tape {
 public:
  using Var = int;

  // With record_grad == false no node requires a gradient (inference).
  explicit Tape(bool record_grad = true) : record_(record_grad) {}

  Var param(Param& p);
  Var constant(Matrix m);

  Var matmul(Var a, Var b);
  // a * b^T
  Var matmul_nt(Var a, Var b);
  Var add(Var a, Var b);
  // Adds a 1 x c row vector to every row of a.
  Var add_row(Var a, Var row);
  Var tanh(Var a);
  Var scale(Var a, double s);
  // out.row(g) = a.row(clamp(g - offset)); edge rows are replicated.
  Var shift_rows(Var a, int offset);
  Var gather_rows(Var table, std::vector<int> ids);
  // Row-wise softmax; when causal, row r only sees columns <= r.
  Var softmax_rows(Var a, bool causal);

  const Matrix& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Adds `g` to the incoming gradient of v.
  void seed(Var v, const Matrix& g);
  void backward();

 private:
  enum class Op {
    Param, Constant, MatMul, MatMulNT, Add, AddRow, Tanh, Scale, Shift, Gather, Softmax
  };

  struct Node {
    Op op;
    Var a = -1, b = -1;
    int offset = 0;
    bool causal = false;
    double s = 0.0;
    std::vector<int> ids;
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Param* param = nullptr;
  };

  Var push(Node n);
  void accumulate(Var v, const Matrix& g);

  std::vector<Node> nodes_;
  bool record_;
};

}  // namespace hatl::ad
