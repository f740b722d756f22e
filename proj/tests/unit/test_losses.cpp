#include <doctest.h>

#include <random>

#include "../oracles.hpp"
#include "hatl/errors.hpp"
#include "hatl/losses.hpp"

using namespace hatl;
using losses::Mask;

TEST_SUITE("losses") {

TEST_CASE("text cross-entropy averages over valid positions") {
  Matrix a(2, 3), b(1, 3);
  a << 0, 0, 0, 1, 2, 3;
  b << 5, 0, 0;
  const std::vector<Matrix> logits{a, b};
  const std::vector<TokenSeq> y{{0, 2}, {1}};
  Mask ma(2), mb(1);
  ma << true, true;
  mb << true;
  const std::vector<Mask> valid{ma, mb};
  const auto r = losses::cross_entropy_text(logits, y, valid);
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  const double want = (std::log(3.0) + (lse - 3.0) + (std::log(std::exp(5.0) + 2.0) - 0.0)) / 3.0;
  CHECK(r.count == 3);
  CHECK(r.loss == doctest::Approx(want));
}

TEST_CASE("masked rows contribute nothing") {
  Matrix a(3, 4);
  a << 1, 2, 3, 4, 0, 0, 0, 0, -1, 7, 2, 0;
  Mask m(3);
  m << true, false, true;
  const std::vector<Matrix> logits{a};
  const std::vector<TokenSeq> y{{3, 1, 1}};
  const auto r = losses::cross_entropy_text(logits, y, std::vector<Mask>{m});
  CHECK(r.grads[0].row(1).isZero());
  Matrix changed = a;
  changed.row(1) << 9, -9, 4, 4;
  const auto r2 = losses::cross_entropy_text(std::vector<Matrix>{changed}, y, std::vector<Mask>{m});
  CHECK(r2.loss == r.loss);
}

TEST_CASE("gradients match central differences") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n;
  Matrix z(4, 5);
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = n(rng);
  const std::vector<TokenSeq> y{{0, 4, 2, 2}};
  Mask m(4);
  m << true, true, false, true;
  auto f = [&] { return losses::framewise_ce(std::vector<Matrix>{z}, y, std::vector<Mask>{m}).loss; };
  const auto r = losses::framewise_ce(std::vector<Matrix>{z}, y, std::vector<Mask>{m});
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = 0; j < z.cols(); ++j)
      CHECK(oracle::rel_err(r.grads[0](i, j), oracle::central_diff(z, i, j, f)) <= 1e-6);
}

TEST_CASE("empty sets are errors") {
  const std::vector<Matrix> logits{Matrix::Zero(2, 3)};
  const std::vector<TokenSeq> y{{1, 1}};
  const std::vector<Mask> none{Mask::Constant(2, false)};
  CHECK_THROWS_AS(losses::cross_entropy_text(logits, y, none), std::invalid_argument);
  CHECK_THROWS_AS(losses::framewise_ce(logits, y, none), ConfigError);
}

TEST_CASE("composite loss is the weighted sum") {
  losses::LossParts p{2.0, 3.0, 4.0, 5.0};
  losses::LossWeights w{1.0, 1.0, 0.5, 0.25};
  CHECK(losses::composite_loss(p, w).total == doctest::Approx(2.0 + 3.0 + 2.0 + 1.25));
  w.ctc = 0.0;
  CHECK(losses::composite_loss(p, w).total == doctest::Approx(3.0 + 2.0 + 1.25));
  w.ce = -1.0;
  CHECK_THROWS_AS(losses::composite_loss(p, w), ConfigError);
  p.ctc = std::nan("");
  CHECK_THROWS_AS(losses::composite_loss(p, losses::LossWeights{}), NumericError);
}

}
