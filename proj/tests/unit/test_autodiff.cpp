#include <doctest.h>

#include <random>

#include "../oracles.hpp"
#include "hatl/autodiff.hpp"

using namespace hatl;
using ad::Param;
using ad::Tape;

namespace {

Param make(const char* name, int r, int c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 0.7);
  Param p;
  p.name = name;
  p.value = Matrix(r, c);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value(i) = n(rng);
  p.grad = Matrix::Zero(r, c);
  return p;
}

// Loss = sum(out .* W) for a fixed random weighting W, so every output
// coordinate matters.
using Build = std::function<Tape::Var(Tape&, std::vector<Param>&)>;

void check_op(std::vector<Param> params, const Build& build, double tol = 1e-6) {
  std::mt19937_64 rng(99);
  Tape probe(false);
  const Matrix shape = probe.value(build(probe, params));
  Matrix weight(shape.rows(), shape.cols());
  std::normal_distribution<double> n;
  for (Eigen::Index i = 0; i < weight.size(); ++i) weight(i) = n(rng);

  auto loss = [&] {
    Tape t(false);
    return (t.value(build(t, params)).array() * weight.array()).sum();
  };
  for (auto& p : params) p.grad.setZero();
  Tape t;
  const auto out = build(t, params);
  t.seed(out, weight);
  t.backward();
  for (auto& p : params)
    for (Eigen::Index i = 0; i < p.value.rows(); ++i)
      for (Eigen::Index j = 0; j < p.value.cols(); ++j) {
        const double num = oracle::central_diff(p.value, i, j, loss);
        INFO(p.name << "(" << i << "," << j << ")");
        CHECK(oracle::rel_err(p.grad(i, j), num) <= tol);
      }
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("matmul, matmul_nt, add, add_row") {
  std::mt19937_64 rng(1);
  check_op({make("a", 3, 4, rng), make("b", 4, 2, rng)},
           [](Tape& t, std::vector<Param>& p) { return t.matmul(t.param(p[0]), t.param(p[1])); });
  check_op({make("a", 3, 4, rng), make("b", 5, 4, rng)},
           [](Tape& t, std::vector<Param>& p) { return t.matmul_nt(t.param(p[0]), t.param(p[1])); });
  check_op({make("a", 3, 4, rng), make("r", 1, 4, rng)}, [](Tape& t, std::vector<Param>& p) {
    return t.add(t.add_row(t.param(p[0]), t.param(p[1])), t.param(p[0]));
  });
}

TEST_CASE("tanh and scale") {
  std::mt19937_64 rng(2);
  check_op({make("a", 4, 3, rng)},
           [](Tape& t, std::vector<Param>& p) { return t.scale(t.tanh(t.param(p[0])), -1.7); });
}

TEST_CASE("shift_rows both directions") {
  std::mt19937_64 rng(3);
  for (int off : {-2, -1, 1, 3})
    check_op({make("a", 5, 2, rng)}, [off](Tape& t, std::vector<Param>& p) { return t.shift_rows(t.param(p[0]), off); });
}

TEST_CASE("shift replicates the edge row") {
  Tape t(false);
  Matrix m(3, 1);
  m << 1, 2, 3;
  const Matrix down = t.value(t.shift_rows(t.constant(m), 1));
  const Matrix up = t.value(t.shift_rows(t.constant(m), -1));
  CHECK(down(0, 0) == 1);
  CHECK(down(1, 0) == 1);
  CHECK(down(2, 0) == 2);
  CHECK(up(0, 0) == 2);
  CHECK(up(2, 0) == 3);
}

TEST_CASE("gather_rows with repeated ids") {
  std::mt19937_64 rng(4);
  check_op({make("emb", 4, 3, rng)},
           [](Tape& t, std::vector<Param>& p) { return t.gather_rows(t.param(p[0]), {2, 0, 2, 3}); });
}

TEST_CASE("softmax rows, plain and causal") {
  std::mt19937_64 rng(5);
  for (bool causal : {false, true})
    check_op({make("a", 4, 4, rng)},
             [causal](Tape& t, std::vector<Param>& p) { return t.softmax_rows(t.param(p[0]), causal); });
  Tape t(false);
  const Matrix s = t.value(t.softmax_rows(t.constant(Matrix::Zero(3, 3)), true));
  CHECK(s(0, 0) == 1.0);
  CHECK(s(0, 1) == 0.0);
  CHECK(s(1, 1) == doctest::Approx(0.5));
  CHECK(s(2, 2) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("frozen parameters receive no gradient") {
  std::mt19937_64 rng(6);
  Param a = make("a", 2, 2, rng), b = make("b", 2, 2, rng);
  b.trainable = false;
  Tape t;
  const auto out = t.matmul(t.param(a), t.param(b));
  t.seed(out, Matrix::Ones(2, 2));
  t.backward();
  CHECK_FALSE(a.grad.isZero());
  CHECK(b.grad.isZero());
}

TEST_CASE("gradients accumulate across tapes") {
  std::mt19937_64 rng(7);
  Param a = make("a", 2, 3, rng);
  for (int i = 0; i < 2; ++i) {
    Tape t;
    t.seed(t.tanh(t.param(a)), Matrix::Ones(2, 3));
    t.backward();
  }
  const Matrix once = 1.0 - a.value.array().tanh().square();
  CHECK(a.grad.isApprox(2.0 * once));
}

TEST_CASE("inference tape records no gradients") {
  std::mt19937_64 rng(8);
  Param a = make("a", 2, 2, rng);
  Tape t(false);
  CHECK_FALSE(t.requires_grad(t.tanh(t.param(a))));
}

}
