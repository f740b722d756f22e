#pragma once

// Reference implementations used only by the tests. Each one is written
// from the definition and shares no code with the library routine it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "hatl/types.hpp"

namespace oracle {

using hatl::Matrix;
using hatl::TokenId;
using hatl::TokenSeq;

// Sum over every length-G path in {0..C-1}^G whose collapse equals target.
// `probs` holds per-frame probabilities (rows sum to one).
inline double ctc_path_sum(const Matrix& probs, const TokenSeq& target) {
  const int G = static_cast<int>(probs.rows()), C = static_cast<int>(probs.cols());
  std::vector<int> path(static_cast<std::size_t>(G), 0);
  double total = 0.0;
  for (;;) {
    TokenSeq collapsed;
    int prev = -1;
    for (int s : path) {
      if (s != prev && s != 0) collapsed.push_back(s);
      prev = s;
    }
    if (collapsed == target) {
      double p = 1.0;
      for (int g = 0; g < G; ++g) p *= probs(g, path[static_cast<std::size_t>(g)]);
      total += p;
    }
    int g = G - 1;
    while (g >= 0 && ++path[static_cast<std::size_t>(g)] == C) path[static_cast<std::size_t>(g--)] = 0;
    if (g < 0) break;
  }
  return total;
}

// Every sequence over {1..V} with length in [1, max_len].
inline std::vector<TokenSeq> all_targets(int V, int max_len) {
  std::vector<TokenSeq> out, frontier{{}};
  for (int len = 1; len <= max_len; ++len) {
    std::vector<TokenSeq> next;
    for (const auto& s : frontier)
      for (int v = 1; v <= V; ++v) {
        TokenSeq t = s;
        t.push_back(v);
        next.push_back(t);
        out.push_back(t);
      }
    frontier = std::move(next);
  }
  return out;
}

// BLEU by counting n-grams as space-joined strings.
struct Bleu {
  double bleu = 0.0;
  std::vector<double> p;
  double bp = 0.0;
};

inline std::unordered_map<std::string, int> grams(const std::vector<std::string>& w, int n) {
  std::unordered_map<std::string, int> out;
  for (int i = 0; i + n <= static_cast<int>(w.size()); ++i) {
    std::string key;
    for (int j = i; j < i + n; ++j) key += w[static_cast<std::size_t>(j)] + " ";
    out[key] += 1;
  }
  return out;
}

inline Bleu bleu(const std::vector<std::vector<std::string>>& cands,
                 const std::vector<std::vector<std::string>>& refs, int N) {
  Bleu b;
  double c = 0, r = 0;
  std::vector<double> hit(static_cast<std::size_t>(N), 0), all(static_cast<std::size_t>(N), 0);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    c += static_cast<double>(cands[i].size());
    r += static_cast<double>(refs[i].size());
    for (int n = 1; n <= N; ++n) {
      auto cg = grams(cands[i], n), rg = grams(refs[i], n);
      for (auto& [k, v] : cg) {
        all[static_cast<std::size_t>(n - 1)] += v;
        hit[static_cast<std::size_t>(n - 1)] += std::min(v, rg.count(k) ? rg[k] : 0);
      }
    }
  }
  double logsum = 0;
  bool zero = false;
  for (int n = 0; n < N; ++n) {
    const double p = all[static_cast<std::size_t>(n)] == 0 ? 0.0 : hit[static_cast<std::size_t>(n)] / all[static_cast<std::size_t>(n)];
    b.p.push_back(p);
    if (p == 0) zero = true;
    else logsum += std::log(p);
  }
  b.bp = c == 0 ? 0.0 : (c > r ? 1.0 : std::exp(1.0 - r / c));
  b.bleu = zero ? 0.0 : b.bp * std::exp(logsum / N);
  return b;
}

// LCS by plain recursion with memoisation.
inline int lcs(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::map<std::pair<std::size_t, std::size_t>, int> memo;
  std::function<int(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> int {
    if (i == a.size() || j == b.size()) return 0;
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const int v = a[i] == b[j] ? 1 + go(i + 1, j + 1) : std::max(go(i + 1, j), go(i, j + 1));
    return memo[key] = v;
  };
  return go(0, 0);
}

inline double rouge_l(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
  if (cand.empty()) return 0.0;
  return 2.0 * lcs(cand, ref) / static_cast<double>(cand.size() + ref.size());
}

// Relative error with an absolute floor so that two tiny numbers agree.
inline double rel_err(double a, double n, double floor = 1e-8) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Central difference of f at coordinate x(i, j).
inline double central_diff(Matrix& x, Eigen::Index i, Eigen::Index j, const std::function<double()>& f,
                           double h = 1e-6) {
  const double keep = x(i, j);
  x(i, j) = keep + h;
  const double up = f();
  x(i, j) = keep - h;
  const double down = f();
  x(i, j) = keep;
  return (up - down) / (2.0 * h);
}

// Five-point stencil: truncation error O(h^4), so a larger step keeps
// round-off in the loss out of small gradients.
inline double five_point_diff(Matrix& x, Eigen::Index i, Eigen::Index j, const std::function<double()>& f,
                              double h = 5e-4) {
  const double keep = x(i, j);
  auto at = [&](double dx) {
    x(i, j) = keep + dx;
    return f();
  };
  const double v = -at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h);
  x(i, j) = keep;
  return v / (12.0 * h);
}

// Best complete hypothesis by enumeration. Words are kFirstWord..vocab-1;
// a hypothesis ends with EOS or after max_len words (no EOS term then).
// step(prefix_with_bos, history_words, next) gives the fused step score.
struct Exhaustive {
  TokenSeq tokens;
  double score = -1e300;
};

inline Exhaustive exhaustive_decode(int text_vocab, int max_len,
                                    const std::function<double(const TokenSeq&, TokenId)>& step) {
  Exhaustive best;
  std::function<void(TokenSeq&, double)> walk = [&](TokenSeq& words, double score) {
    const double ended = score + step(words, hatl::kEos);
    if (ended > best.score) best = {words, ended};
    if (static_cast<int>(words.size()) == max_len) return;
    for (TokenId w = hatl::kFirstWord; w < text_vocab; ++w) {
      const double s = score + step(words, w);
      words.push_back(w);
      if (static_cast<int>(words.size()) == max_len) {
        if (s > best.score) best = {words, s};
      } else {
        walk(words, s);
      }
      words.pop_back();
    }
  };
  TokenSeq words;
  walk(words, 0.0);
  return best;
}

}  // namespace oracle
