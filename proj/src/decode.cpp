#include "hatl/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

#include "hatl/ctc.hpp"
#include "hatl/errors.hpp"

namespace hatl::decode {

NGramLM NGramLM::train(const std::vector<TokenSeq>& corpus, int order, int text_vocab, double k) {
  if (corpus.empty()) throw std::invalid_argument("train_ngram_lm: empty corpus");
  if (order < 1) throw std::invalid_argument("train_ngram_lm: order must be >= 1");
  if (!(k > 0)) throw std::invalid_argument("train_ngram_lm: k must be > 0");
  if (text_vocab <= kFirstWord) throw std::invalid_argument("train_ngram_lm: empty word vocabulary");
  NGramLM lm;
  lm.order_ = order;
  lm.k_ = k;
  lm.text_vocab_ = text_vocab;
  for (const TokenSeq& sentence : corpus) {
    std::vector<TokenId> padded(static_cast<std::size_t>(order - 1), kBos);
    for (TokenId t : sentence) {
      if (!lm.predictable(t) || t == kEos)
        throw std::invalid_argument("train_ngram_lm: token " + std::to_string(t) + " outside vocabulary");
      padded.push_back(t);
    }
    padded.push_back(kEos);
    for (std::size_t i = static_cast<std::size_t>(order - 1); i < padded.size(); ++i) {
      for (int len = 0; len < order; ++len) {
        std::vector<TokenId> ctx(padded.begin() + static_cast<long>(i) - len, padded.begin() + static_cast<long>(i));
        Counts& c = lm.table_[ctx];
        ++c.next[padded[i]];
        ++c.total;
      }
    }
  }
  return lm;
}

double NGramLM::prob(std::span<const TokenId> history, TokenId next) const {
  if (!predictable(next)) throw std::invalid_argument("ngram: token " + std::to_string(next) + " outside vocabulary");
  std::vector<TokenId> padded(static_cast<std::size_t>(order_ - 1), kBos);
  padded.insert(padded.end(), history.begin(), history.end());
  const double v = static_cast<double>(symbol_count());
  for (int len = order_ - 1; len >= 0; --len) {
    std::vector<TokenId> ctx(padded.end() - len, padded.end());
    auto it = table_.find(ctx);
    if (it == table_.end() || it->second.total == 0) continue;
    auto n = it->second.next.find(next);
    const double c = n == it->second.next.end() ? 0.0 : static_cast<double>(n->second);
    return (c + k_) / (static_cast<double>(it->second.total) + k_ * v);
  }
  throw std::logic_error("ngram: empty unigram table");
}

double NGramLM::log_prob(std::span<const TokenId> history, TokenId next) const {
  return std::log(prob(history, next));
}

double NGramLM::sentence_log_prob(std::span<const TokenId> sentence) const {
  double lp = 0.0;
  for (std::size_t i = 0; i < sentence.size(); ++i) lp += log_prob(sentence.subspan(0, i), sentence[i]);
  return lp + log_prob(sentence, kEos);
}

double NGramLM::perplexity(const std::vector<TokenSeq>& corpus) const {
  double lp = 0.0;
  long n = 0;
  for (const auto& s : corpus) {
    lp += sentence_log_prob(s);
    n += static_cast<long>(s.size()) + 1;
  }
  return std::exp(-lp / static_cast<double>(n));
}

void BeamConfig::validate() const {
  if (width < 1) throw ConfigError("beam: width must be >= 1");
  if (max_len < 1) throw ConfigError("beam: max_len must be >= 1");
  if (!(temperature > 0)) throw ConfigError("beam: temperature must be > 0");
  if (lm_weight < 0) throw ConfigError("beam: lm_weight must be >= 0");
}

namespace {

std::vector<TokenId> allowed_tokens(int text_vocab) {
  std::vector<TokenId> out{kEos};
  for (TokenId t = kFirstWord; t < text_vocab; ++t) out.push_back(t);
  return out;
}

TokenSeq with_bos(const TokenSeq& tokens) {
  TokenSeq p{kBos};
  p.insert(p.end(), tokens.begin(), tokens.end());
  return p;
}

}  // namespace

double step_score(const Vector& model_lp, const NGramLM* lm, double lm_weight,
                  std::span<const TokenId> history, TokenId next) {
  double s = model_lp(next);
  if (lm && lm_weight != 0.0) s += lm_weight * lm->log_prob(history, next);
  return s;
}

double sequence_score(const NextTokenScorer& scorer, const NGramLM* lm, double lm_weight,
                      const Hypothesis& h) {
  double s = 0.0;
  TokenSeq prefix{kBos};
  for (std::size_t i = 0; i <= h.tokens.size(); ++i) {
    if (i == h.tokens.size() && !h.ended) break;
    const TokenId next = i < h.tokens.size() ? h.tokens[i] : kEos;
    const Vector lp = scorer(prefix);
    s += step_score(lp, lm, lm_weight, std::span<const TokenId>(h.tokens).subspan(0, i), next);
    prefix.push_back(next);
  }
  return s;
}

Hypothesis greedy(const NextTokenScorer& scorer, int text_vocab, int max_len) {
  if (max_len < 1) throw std::invalid_argument("greedy: max_len must be >= 1");
  const auto allowed = allowed_tokens(text_vocab);
  Hypothesis h;
  TokenSeq prefix{kBos};
  for (int step = 0; step < max_len; ++step) {
    const Vector lp = scorer(prefix);
    TokenId best = allowed.front();
    for (TokenId t : allowed)
      if (lp(t) > lp(best) || (lp(t) == lp(best) && t < best)) best = t;
    h.score += lp(best);
    if (best == kEos) {
      h.ended = true;
      break;
    }
    h.tokens.push_back(best);
    prefix.push_back(best);
  }
  return h;
}

Hypothesis beam_search(const NextTokenScorer& scorer, int text_vocab, const BeamConfig& cfg,
                       const NGramLM* lm) {
  cfg.validate();
  const auto allowed = allowed_tokens(text_vocab);
  struct Candidate {
    Hypothesis hyp;
    TokenId token;
    std::size_t parent;
  };
  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> finished;

  for (int step = 0; step < cfg.max_len && !live.empty(); ++step) {
    std::vector<Candidate> cands;
    cands.reserve(live.size() * allowed.size());
    for (std::size_t i = 0; i < live.size(); ++i) {
      const Vector lp = scorer(with_bos(live[i].tokens));
      for (TokenId t : allowed) {
        Candidate c{live[i], t, i};
        c.hyp.score += step_score(lp, lm, cfg.lm_weight, live[i].tokens, t);
        if (t == kEos)
          c.hyp.ended = true;
        else
          c.hyp.tokens.push_back(t);
        cands.push_back(std::move(c));
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      if (a.hyp.score != b.hyp.score) return a.hyp.score > b.hyp.score;
      if (a.token != b.token) return a.token < b.token;
      return a.parent < b.parent;
    });
    if (cands.size() > static_cast<std::size_t>(cfg.width)) cands.resize(static_cast<std::size_t>(cfg.width));

    live.clear();
    const bool last = step + 1 == cfg.max_len;
    for (auto& c : cands) {
      if (c.hyp.ended || last)
        finished.push_back(std::move(c.hyp));
      else
        live.push_back(std::move(c.hyp));
    }
  }

  auto best = std::max_element(finished.begin(), finished.end(), [](const Hypothesis& a, const Hypothesis& b) {
    return a.score < b.score;
  });
  return *best;
}

NextTokenScorer model_scorer(LayeredModel& model, const Matrix& frames) {
  auto enc = std::make_shared<Matrix>(model.encoder_states(frames));
  return [&model, enc](std::span<const TokenId> prefix) { return model.next_token_log_probs(*enc, prefix); };
}

TokenSeq greedy_decode(LayeredModel& model, const Matrix& frames, int max_len) {
  // The decoder has max_text_len positions, BOS included.
  max_len = std::min(max_len, model.config().max_text_len - 1);
  return greedy(model_scorer(model, frames), model.config().text_vocab, max_len).tokens;
}

TokenSeq beam_search(LayeredModel& model, const Matrix& frames, const BeamConfig& cfg, const NGramLM* lm) {
  BeamConfig c = cfg;
  c.max_len = std::min(c.max_len, model.config().max_text_len - 1);
  return beam_search(model_scorer(model, frames), model.config().text_vocab, c, lm).tokens;
}

TokenSeq ctc_collapse(std::span<const TokenId> path) {
  TokenSeq out;
  TokenId prev = -1;
  for (TokenId t : path) {
    if (t != prev && t != kBlank) out.push_back(t);
    prev = t;
  }
  return out;
}

TokenSeq ctc_gloss_decode(const Matrix& log_probs, double blank_bias, double temperature) {
  if (!(temperature > 0)) throw std::invalid_argument("ctc_gloss_decode: temperature must be > 0");
  Matrix z = log_probs / temperature;
  z.col(kBlank).array() -= blank_bias;
  const Matrix lp = ctc::log_softmax_rows(z);
  TokenSeq path(static_cast<std::size_t>(lp.rows()));
  for (Eigen::Index g = 0; g < lp.rows(); ++g) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < lp.cols(); ++c)
      if (lp(g, c) > lp(g, best)) best = c;
    path[static_cast<std::size_t>(g)] = static_cast<TokenId>(best);
  }
  return ctc_collapse(path);
}

}  // namespace hatl::decode
