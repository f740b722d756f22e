#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "hatl/types.hpp"

namespace hatl::losses {

using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

struct LossWeights {
  double ctc = 1.0;
  double ce = 1.0;
  double enc = 0.5;
  double bb = 0.5;

  void validate() const;
};

struct LossParts {
  double ctc = 0.0;
  double ce = 0.0;
  double enc = 0.0;
  double bb = 0.0;
};

struct CompositeLoss {
  double total = 0.0;
  LossParts parts;  // unweighted
};

// Mean negative log-likelihood over unmasked rows of a set of per-sample
// logit matrices; gradients are w.r.t. the logits and zero on masked rows.
struct MaskedCe {
  double loss = 0.0;
  long count = 0;
  std::vector<Matrix> grads;
};

// Autoregressive text cross-entropy. logits[i] is S_i x V; targets[i] and
// valid[i] have S_i entries. Normalized by the number of valid positions.
// Throws std::invalid_argument when every position is padding.
MaskedCe cross_entropy_text(std::span<const Matrix> logits, std::span<const TokenSeq> targets,
                            std::span<const Mask> valid);

// Frame-wise supervision: mean over the aligned set M (the `aligned` masks).
// The same routine serves the encoder and the backbone heads.
// Throws ConfigError when M is empty.
MaskedCe framewise_ce(std::span<const Matrix> frame_logits, std::span<const TokenSeq> labels,
                      std::span<const Mask> aligned);

// w_ctc L_ctc + w_ce L_ce + w_enc L_enc + w_bb L_bb. Throws ConfigError on
// negative weights and NumericError on non-finite parts.
CompositeLoss composite_loss(const LossParts& parts, const LossWeights& w);

// Convenience for single-sample callers: every row valid.
Mask all_valid(Eigen::Index n);

}  // namespace hatl::losses
