#pragma once

// Connectionist temporal classification over frame-level gloss distributions.
//
// Log-probabilities are a G x (V + 1) matrix whose column 0 is the blank.
// All recursions run in log space over the blank-augmented target
// l' = (blank, y_1, blank, y_2, ..., y_U, blank) of length 2U + 1.

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <limits>
#include <span>
#include <string>

#include "hatl/errors.hpp"
#include "hatl/types.hpp"

namespace hatl::ctc {

template <typename S>
using MatrixX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

// Number of forward passes run so far; lets callers assert that a code path
// never touched the CTC lattice.
inline std::atomic<std::uint64_t> lattice_calls{0};

template <typename S>
inline S log_add(S a, S b) {
  constexpr S ninf = -std::numeric_limits<S>::infinity();
  if (a == ninf) return b;
  if (b == ninf) return a;
  const S m = a > b ? a : b;
  return m + std::log1p(std::exp(-(a > b ? a - b : b - a)));
}

// Row-wise log-softmax with max shift.
template <typename Derived>
MatrixX<typename Derived::Scalar> log_softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  using S = typename Derived::Scalar;
  MatrixX<S> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const S m = logits.row(r).maxCoeff();
    const S lse = m + std::log((logits.row(r).array() - m).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

// Minimum number of frames able to emit `target`: one per symbol plus a
// separating blank between each adjacent repeated pair.
inline Eigen::Index min_frames(std::span<const TokenId> target) {
  Eigen::Index need = static_cast<Eigen::Index>(target.size());
  for (std::size_t u = 1; u < target.size(); ++u)
    if (target[u] == target[u - 1]) ++need;
  return need;
}

template <typename S>
void check_target(const MatrixX<S>& lp, std::span<const TokenId> target) {
  if (target.empty()) throw std::invalid_argument("ctc: empty target");
  if (lp.rows() < 1) throw std::invalid_argument("ctc: no frames");
  for (TokenId y : target)
    if (y < 1 || y >= lp.cols())
      throw std::invalid_argument("ctc: target symbol " + std::to_string(y) + " out of range");
  const Eigen::Index need = min_frames(target);
  if (lp.rows() < need)
    throw InfeasibleTarget("ctc: target needs " + std::to_string(need) + " frames, got " +
                           std::to_string(lp.rows()));
}

// Forward (alpha) and backward (beta) lattices, both G x (2U+1), in log space.
// beta includes the emission at its own frame, so alpha(g,s) + beta(g,s) -
// lp(g, l'_s) is the log-probability mass of paths through (g, s).
template <typename S>
struct Lattice {
  MatrixX<S> log_alpha;
  MatrixX<S> log_beta;
  std::vector<TokenId> extended;
  S log_likelihood;
};

template <typename S>
Lattice<S> lattice(const MatrixX<S>& lp, std::span<const TokenId> target) {
  check_target(lp, target);
  lattice_calls.fetch_add(1, std::memory_order_relaxed);
  constexpr S ninf = -std::numeric_limits<S>::infinity();
  const Eigen::Index G = lp.rows();
  const Eigen::Index L = 2 * static_cast<Eigen::Index>(target.size()) + 1;

  Lattice<S> lat;
  lat.extended.assign(L, kBlank);
  for (std::size_t u = 0; u < target.size(); ++u) lat.extended[2 * u + 1] = target[u];
  const auto& ext = lat.extended;
  auto can_skip = [&](Eigen::Index s) { return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]; };
  auto can_skip_back = [&](Eigen::Index s) {
    return s + 2 < L && ext[s] != kBlank && ext[s] != ext[s + 2];
  };

  lat.log_alpha = MatrixX<S>::Constant(G, L, ninf);
  lat.log_alpha(0, 0) = lp(0, ext[0]);
  if (L > 1) lat.log_alpha(0, 1) = lp(0, ext[1]);
  for (Eigen::Index g = 1; g < G; ++g) {
    for (Eigen::Index s = 0; s < L; ++s) {
      S acc = lat.log_alpha(g - 1, s);
      if (s >= 1) acc = log_add(acc, lat.log_alpha(g - 1, s - 1));
      if (can_skip(s)) acc = log_add(acc, lat.log_alpha(g - 1, s - 2));
      lat.log_alpha(g, s) = acc == ninf ? ninf : acc + lp(g, ext[s]);
    }
  }

  lat.log_beta = MatrixX<S>::Constant(G, L, ninf);
  lat.log_beta(G - 1, L - 1) = lp(G - 1, ext[L - 1]);
  if (L > 1) lat.log_beta(G - 1, L - 2) = lp(G - 1, ext[L - 2]);
  for (Eigen::Index g = G - 2; g >= 0; --g) {
    for (Eigen::Index s = 0; s < L; ++s) {
      S acc = lat.log_beta(g + 1, s);
      if (s + 1 < L) acc = log_add(acc, lat.log_beta(g + 1, s + 1));
      if (can_skip_back(s)) acc = log_add(acc, lat.log_beta(g + 1, s + 2));
      lat.log_beta(g, s) = acc == ninf ? ninf : acc + lp(g, ext[s]);
    }
  }

  S ll = lat.log_alpha(G - 1, L - 1);
  if (L > 1) ll = log_add(ll, lat.log_alpha(G - 1, L - 2));
  lat.log_likelihood = ll;
  return lat;
}

// Negative log-likelihood of `target` under per-frame log-probabilities.
template <typename S>
S loss(const MatrixX<S>& lp, std::span<const TokenId> target) {
  return -lattice(lp, target).log_likelihood;
}

template <typename S>
struct LossAndGrad {
  S loss;
  MatrixX<S> grad;  // d loss / d pre-softmax logits
};

// Loss and its gradient with respect to the logits z, where lp = log_softmax(z).
// The gradient is softmax(z) - gamma, gamma being the per-frame symbol
// occupancy posterior from forward-backward.
template <typename S>
LossAndGrad<S> loss_and_grad(const MatrixX<S>& lp, std::span<const TokenId> target) {
  constexpr S ninf = -std::numeric_limits<S>::infinity();
  const Lattice<S> lat = lattice(lp, target);
  const Eigen::Index G = lp.rows();
  const Eigen::Index L = static_cast<Eigen::Index>(lat.extended.size());

  MatrixX<S> log_gamma = MatrixX<S>::Constant(G, lp.cols(), ninf);
  for (Eigen::Index g = 0; g < G; ++g)
    for (Eigen::Index s = 0; s < L; ++s) {
      const S a = lat.log_alpha(g, s), b = lat.log_beta(g, s);
      if (a == ninf || b == ninf) continue;
      const TokenId c = lat.extended[s];
      log_gamma(g, c) = log_add(log_gamma(g, c), a + b - lp(g, c));
    }

  LossAndGrad<S> out{-lat.log_likelihood, MatrixX<S>(G, lp.cols())};
  out.grad = lp.array().exp() - (log_gamma.array() - lat.log_likelihood).exp();
  return out;
}

template <typename S>
MatrixX<S> grad(const MatrixX<S>& lp, std::span<const TokenId> target) {
  return loss_and_grad(lp, target).grad;
}

}  // namespace hatl::ctc
