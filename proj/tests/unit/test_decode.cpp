#include <doctest.h>

#include <cmath>
#include <random>

#include "../oracles.hpp"
#include "hatl/ctc.hpp"
#include "hatl/decode.hpp"
#include "hatl/errors.hpp"

using namespace hatl;
using namespace hatl::decode;

namespace {

// A fixed random next-token distribution per prefix, derived from a hash of
// the prefix so that every caller sees the same values in any call order.
NextTokenScorer random_scorer(std::uint64_t seed, int text_vocab) {
  return [seed, text_vocab](std::span<const TokenId> prefix) {
    std::uint64_t h = seed * 0x9E3779B97F4A7C15ULL;
    for (TokenId t : prefix) h = (h ^ static_cast<std::uint64_t>(t + 1)) * 0x100000001B3ULL;
    std::mt19937_64 rng(h);
    std::normal_distribution<double> n(0.0, 1.5);
    Matrix logits(1, text_vocab);
    for (int v = 0; v < text_vocab; ++v) logits(0, v) = n(rng);
    return Vector(ctc::log_softmax_rows(logits).row(0).transpose());
  };
}

TokenSeq with_bos(const TokenSeq& w) {
  TokenSeq p{kBos};
  p.insert(p.end(), w.begin(), w.end());
  return p;
}

}  // namespace

TEST_SUITE("decode") {
  TEST_CASE("wide beam equals exhaustive search") {
    const int V = kFirstWord + 3, max_len = 3;
    BeamConfig cfg;
    cfg.width = 27;
    cfg.max_len = max_len;
    cfg.lm_weight = 0.0;
    for (std::uint64_t s = 1; s <= 20; ++s) {
      const auto scorer = random_scorer(s, V);
      const auto truth = oracle::exhaustive_decode(
          V, max_len, [&](const TokenSeq& w, TokenId next) { return scorer(with_bos(w))(next); });
      const Hypothesis h = beam_search(scorer, V, cfg);
      CAPTURE(s);
      CHECK(h.tokens == truth.tokens);
      CHECK(h.score == doctest::Approx(truth.score).epsilon(1e-12));
      CHECK(sequence_score(scorer, nullptr, 0.0, h) == doctest::Approx(h.score).epsilon(1e-12));
    }
  }

  TEST_CASE("wide beam with a language model equals exhaustive fused search") {
    const int V = kFirstWord + 3, max_len = 3;
    const NGramLM lm = NGramLM::train({{3, 4}, {5, 5, 3}, {4}}, 2, V, 0.1);
    BeamConfig cfg;
    cfg.width = 27;
    cfg.max_len = max_len;
    cfg.lm_weight = 0.7;
    for (std::uint64_t s = 1; s <= 10; ++s) {
      const auto scorer = random_scorer(100 + s, V);
      const auto truth = oracle::exhaustive_decode(V, max_len, [&](const TokenSeq& w, TokenId next) {
        return scorer(with_bos(w))(next) + 0.7 * std::log(lm.prob(w, next));
      });
      const Hypothesis h = beam_search(scorer, V, cfg, &lm);
      CAPTURE(s);
      CHECK(h.tokens == truth.tokens);
      CHECK(h.score == doctest::Approx(truth.score).epsilon(1e-12));
    }
  }

  TEST_CASE("beam of width one is greedy") {
    for (std::uint64_t s = 1; s <= 50; ++s) {
      const int V = kFirstWord + 2 + static_cast<int>(s % 5);
      const auto scorer = random_scorer(1000 + s, V);
      BeamConfig cfg;
      cfg.width = 1;
      cfg.max_len = 6;
      const Hypothesis b = beam_search(scorer, V, cfg);
      const Hypothesis g = greedy(scorer, V, 6);
      CAPTURE(s);
      CHECK(b.tokens == g.tokens);
      CHECK(b.ended == g.ended);
      CHECK(b.score == doctest::Approx(g.score).epsilon(1e-12));
    }
  }

  TEST_CASE("greedy on a real model matches a step-by-step argmax") {
    ModelConfig mc;
    mc.input_dim = 4;
    mc.backbone_width = 3;
    mc.n_layers = 2;
    mc.hidden = 5;
    mc.encoder_layers = 1;
    mc.gloss_vocab = 3;
    mc.text_vocab = 7;
    mc.max_text_len = 5;
    LayeredModel m = LayeredModel::build(mc, 3);
    Matrix x = Matrix::Random(4, 4);
    const TokenSeq got = greedy_decode(m, x, 10);
    CHECK(got.size() <= 4);
    TokenSeq prefix{kBos}, want;
    const Matrix enc = m.encoder_states(x);
    for (int step = 0; step < 4; ++step) {
      const Vector lp = m.next_token_log_probs(enc, prefix);
      TokenId best = kEos;
      for (TokenId t = kFirstWord; t < 7; ++t)
        if (lp(t) > lp(best)) best = t;
      if (best == kEos) break;
      want.push_back(best);
      prefix.push_back(best);
    }
    CHECK(got == want);
  }

  TEST_CASE("n-gram probabilities follow the counts") {
    const int V = kFirstWord + 2;  // words 3, 4
    const NGramLM lm = NGramLM::train({{3, 4}, {3}}, 3, V, 0.1);
    CHECK(lm.symbol_count() == 3);
    // Context (BOS, BOS) was followed by 3 twice.
    CHECK(lm.prob({}, 3) == doctest::Approx(2.1 / 2.3));
    CHECK(lm.prob({}, 4) == doctest::Approx(0.1 / 2.3));
    // (BOS, 3) was followed by 4 once and EOS once.
    CHECK(lm.prob(TokenSeq{3}, kEos) == doctest::Approx(1.1 / 2.3));
    // (4, 3) is unseen: back off to (3), which saw 4 and EOS once each.
    CHECK(lm.prob(TokenSeq{4, 3}, 4) == doctest::Approx(1.1 / 2.3));
    for (const TokenSeq& h : {TokenSeq{}, TokenSeq{3}, TokenSeq{4, 4}, TokenSeq{3, 4, 3}}) {
      const double total = lm.prob(h, 3) + lm.prob(h, 4) + lm.prob(h, kEos);
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
    const double lp = std::log(2.1 / 2.3) + std::log(1.1 / 2.3);
    CHECK(lm.sentence_log_prob(TokenSeq{3}) == doctest::Approx(lp));
    CHECK(lm.perplexity({{3}}) == doctest::Approx(std::exp(-lp / 2)));
    CHECK_THROWS_AS(lm.prob({}, kBos), std::invalid_argument);
    CHECK_THROWS_AS(NGramLM::train({{7}}, 2, V), std::invalid_argument);
    CHECK_THROWS_AS(NGramLM::train({}, 2, V), std::invalid_argument);
  }

  TEST_CASE("CTC gloss decoding") {
    CHECK(ctc_collapse(TokenSeq{0, 1, 1, 0, 1, 2, 2, 0}) == TokenSeq{1, 1, 2});
    CHECK(ctc_collapse(TokenSeq{0, 0}).empty());
    Matrix lp(3, 3);
    lp << std::log(0.5), std::log(0.4), std::log(0.1),  //
        std::log(0.5), std::log(0.1), std::log(0.4),    //
        std::log(0.9), std::log(0.05), std::log(0.05);
    CHECK(ctc_gloss_decode(lp, 0.0, 1.0).empty());
    // A bias of 0.3 makes blank lose to 0.4 but not to 0.05.
    CHECK(ctc_gloss_decode(lp, 0.3, 1.0) == TokenSeq{1, 2});
    CHECK_THROWS_AS(ctc_gloss_decode(lp, 0.0, 0.0), std::invalid_argument);
  }

  TEST_CASE("beam configuration errors") {
    BeamConfig c;
    c.width = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.temperature = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.lm_weight = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
}
