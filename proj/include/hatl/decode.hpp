#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "hatl/model.hpp"
#include "hatl/types.hpp"

namespace hatl::decode {

// Add-k smoothed back-off n-gram model over text word ids plus EOS.
// P(w | h) uses the longest suffix of h (BOS-padded) seen in training:
//   (c(h, w) + k) / (c(h) + k |V|)
class NGramLM {
 public:
  NGramLM() = default;

  // corpus: sentences of word ids in [kFirstWord, text_vocab).
  static NGramLM train(const std::vector<TokenSeq>& corpus, int order, int text_vocab, double k = 0.1);

  double prob(std::span<const TokenId> history, TokenId next) const;
  double log_prob(std::span<const TokenId> history, TokenId next) const;
  // Includes the EOS event.
  double sentence_log_prob(std::span<const TokenId> sentence) const;
  double perplexity(const std::vector<TokenSeq>& corpus) const;

  int order() const { return order_; }
  double k() const { return k_; }
  int text_vocab() const { return text_vocab_; }
  // Number of predictable symbols: words + EOS.
  int symbol_count() const { return text_vocab_ - kFirstWord + 1; }
  bool predictable(TokenId t) const { return t == kEos || (t >= kFirstWord && t < text_vocab_); }

 private:
  struct Counts {
    std::map<TokenId, long> next;
    long total = 0;
  };
  int order_ = 4;
  double k_ = 0.1;
  int text_vocab_ = 0;
  std::map<std::vector<TokenId>, Counts> table_;
};

struct BeamConfig {
  int width = 8;
  double lm_weight = 0.7;
  int max_len = 30;
  double blank_bias = 0.4;
  double temperature = 0.9;

  void validate() const;
};

// Log-probabilities over the text vocabulary for the token following
// `prefix` (which begins with BOS).
using NextTokenScorer = std::function<Vector(std::span<const TokenId> prefix)>;

struct Hypothesis {
  TokenSeq tokens;  // without BOS/EOS
  double score = 0.0;
  bool ended = false;  // emitted EOS
};

// Fused score of one step: model log-prob plus lm_weight times LM log-prob.
double step_score(const Vector& model_lp, const NGramLM* lm, double lm_weight,
                  std::span<const TokenId> history, TokenId next);

// Total fused score of a complete hypothesis.
double sequence_score(const NextTokenScorer& scorer, const NGramLM* lm, double lm_weight,
                      const Hypothesis& h);

// Per-step argmax over EOS and word ids; ties go to the lowest id.
Hypothesis greedy(const NextTokenScorer& scorer, int text_vocab, int max_len);

// Beam search over EOS and word ids. Candidates are ranked by score, then
// token id, then the rank of their parent. Completed hypotheses are those
// emitting EOS or reaching max_len tokens; the best completed one is returned.
Hypothesis beam_search(const NextTokenScorer& scorer, int text_vocab, const BeamConfig& cfg,
                       const NGramLM* lm = nullptr);

NextTokenScorer model_scorer(LayeredModel& model, const Matrix& frames);

TokenSeq greedy_decode(LayeredModel& model, const Matrix& frames, int max_len);
TokenSeq beam_search(LayeredModel& model, const Matrix& frames, const BeamConfig& cfg,
                     const NGramLM* lm = nullptr);

// Temperature-scaled, blank-penalized best-path CTC decoding.
TokenSeq ctc_gloss_decode(const Matrix& log_probs, double blank_bias, double temperature);

// Removes repeats, then blanks.
TokenSeq ctc_collapse(std::span<const TokenId> path);

}  // namespace hatl::decode
