#pragma once

// Corpus BLEU-n and ROUGE-L over token sequences. Templated on the token
// type so the same code scores integer ids and whitespace-split strings.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hatl::metrics {

struct BleuReport {
  std::vector<double> precisions;  // p_1..p_N
  double bp = 0.0;
  double bleu = 0.0;
  long candidate_length = 0;  // c
  long reference_length = 0;  // r
};

inline double brevity_penalty(long c, long r) {
  if (r <= 0) throw std::invalid_argument("brevity_penalty: reference length must be >= 1");
  if (c < 0) throw std::invalid_argument("brevity_penalty: negative candidate length");
  if (c == 0) return 0.0;
  if (c > r) return 1.0;
  return std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c));
}

namespace detail {

template <typename T>
std::map<std::vector<T>, long> ngram_counts(std::span<const T> seq, int n) {
  std::map<std::vector<T>, long> counts;
  if (static_cast<long>(seq.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i)
    ++counts[std::vector<T>(seq.begin() + i, seq.begin() + i + n)];
  return counts;
}

}  // namespace detail

// Micro-averaged clipped n-gram precision with uniform weights 1/max_n.
// Any pooled p_n == 0 yields bleu == 0 unless `smooth` (add-one on n > 1).
template <typename T>
BleuReport corpus_bleu(const std::vector<std::vector<T>>& candidates,
                       const std::vector<std::vector<T>>& references, int max_n = 4,
                       bool smooth = false) {
  if (candidates.size() != references.size())
    throw std::invalid_argument("corpus_bleu: candidate/reference count mismatch");
  if (max_n < 1) throw std::invalid_argument("corpus_bleu: max_n must be >= 1");

  std::vector<long> matched(max_n, 0), total(max_n, 0);
  BleuReport report;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    std::span<const T> cand(candidates[i]);
    std::span<const T> ref(references[i]);
    report.candidate_length += static_cast<long>(cand.size());
    report.reference_length += static_cast<long>(ref.size());
    for (int n = 1; n <= max_n; ++n) {
      const auto c_counts = detail::ngram_counts(cand, n);
      const auto r_counts = detail::ngram_counts(ref, n);
      for (const auto& [gram, count] : c_counts) {
        total[n - 1] += count;
        auto it = r_counts.find(gram);
        if (it != r_counts.end()) matched[n - 1] += std::min(count, it->second);
      }
    }
  }

  report.precisions.resize(max_n);
  double log_sum = 0.0;
  bool zero = false;
  for (int n = 0; n < max_n; ++n) {
    double num = static_cast<double>(matched[n]);
    double den = static_cast<double>(total[n]);
    if (smooth && n > 0) {
      num += 1.0;
      den += 1.0;
    }
    const double p = den > 0.0 ? num / den : 0.0;
    report.precisions[n] = p;
    if (p <= 0.0)
      zero = true;
    else
      log_sum += std::log(p) / max_n;
  }
  if (report.reference_length == 0) {
    report.bp = 0.0;
    report.bleu = 0.0;
    return report;
  }
  report.bp = brevity_penalty(report.candidate_length, report.reference_length);
  report.bleu = zero ? 0.0 : report.bp * std::exp(log_sum);
  return report;
}

template <typename T>
std::size_t lcs_length(std::span<const T> a, std::span<const T> b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

template <typename T>
std::size_t lcs_length(const std::vector<T>& a, const std::vector<T>& b) {
  return lcs_length(std::span<const T>(a), std::span<const T>(b));
}

// 2 * LCS / (|G| + |R|).
template <typename T>
double rouge_l(const std::vector<T>& candidate, const std::vector<T>& reference) {
  if (reference.empty()) throw std::invalid_argument("rouge_l: empty reference");
  if (candidate.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  return 2.0 * lcs / static_cast<double>(candidate.size() + reference.size());
}

// Mean sentence ROUGE-L over a corpus.
template <typename T>
double corpus_rouge_l(const std::vector<std::vector<T>>& candidates,
                      const std::vector<std::vector<T>>& references) {
  if (candidates.size() != references.size())
    throw std::invalid_argument("corpus_rouge_l: candidate/reference count mismatch");
  if (candidates.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) sum += rouge_l(candidates[i], references[i]);
  return sum / static_cast<double>(candidates.size());
}

struct TranslationScores {
  std::array<double, 4> bleu{};
  double rouge = 0.0;
};

template <typename T>
TranslationScores score_translations(const std::vector<std::vector<T>>& candidates,
                                     const std::vector<std::vector<T>>& references) {
  TranslationScores s;
  for (int n = 1; n <= 4; ++n) s.bleu[n - 1] = corpus_bleu(candidates, references, n).bleu;
  s.rouge = corpus_rouge_l(candidates, references);
  return s;
}

std::vector<std::string> tokenize(std::string_view line);

}  // namespace hatl::metrics
