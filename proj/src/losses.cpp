#include "hatl/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "hatl/ctc.hpp"
#include "hatl/errors.hpp"

namespace hatl::losses {

namespace {

MaskedCe masked_ce(std::span<const Matrix> logits, std::span<const TokenSeq> labels,
                   std::span<const Mask> valid) {
  if (logits.size() != labels.size() || logits.size() != valid.size())
    throw std::invalid_argument("masked cross-entropy: batch size mismatch");

  MaskedCe out;
  out.grads.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const Matrix& z = logits[i];
    if (static_cast<Eigen::Index>(labels[i].size()) != z.rows() || valid[i].size() != z.rows())
      throw std::invalid_argument("masked cross-entropy: row count mismatch in sample " +
                                  std::to_string(i));
    out.count += valid[i].count();
  }
  if (out.count == 0) return out;

  const double inv = 1.0 / static_cast<double>(out.count);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const Matrix lp = ctc::log_softmax_rows(logits[i]);
    Matrix& g = out.grads[i];
    g = Matrix::Zero(lp.rows(), lp.cols());
    for (Eigen::Index r = 0; r < lp.rows(); ++r) {
      if (!valid[i](r)) continue;
      const TokenId y = labels[i][r];
      if (y < 0 || y >= lp.cols())
        throw std::invalid_argument("masked cross-entropy: label " + std::to_string(y) +
                                    " out of range");
      out.loss -= lp(r, y);
      g.row(r) = lp.row(r).array().exp() * inv;
      g(r, y) -= inv;
    }
  }
  out.loss *= inv;
  return out;
}

}  // namespace

void LossWeights::validate() const {
  if (ctc < 0 || ce < 0 || enc < 0 || bb < 0) throw ConfigError("loss weights must be >= 0");
}

Mask all_valid(Eigen::Index n) { return Mask::Constant(n, true); }

MaskedCe cross_entropy_text(std::span<const Matrix> logits, std::span<const TokenSeq> targets,
                            std::span<const Mask> valid) {
  MaskedCe out = masked_ce(logits, targets, valid);
  if (out.count == 0) throw std::invalid_argument("cross_entropy_text: batch is all padding");
  return out;
}

MaskedCe framewise_ce(std::span<const Matrix> frame_logits, std::span<const TokenSeq> labels,
                      std::span<const Mask> aligned) {
  MaskedCe out = masked_ce(frame_logits, labels, aligned);
  if (out.count == 0) throw ConfigError("framewise_ce: aligned frame set is empty");
  return out;
}

CompositeLoss composite_loss(const LossParts& parts, const LossWeights& w) {
  w.validate();
  for (double v : {parts.ctc, parts.ce, parts.enc, parts.bb})
    if (!std::isfinite(v)) throw NumericError("composite_loss: non-finite component");
  CompositeLoss out;
  out.parts = parts;
  out.total = w.ctc * parts.ctc + w.ce * parts.ce + w.enc * parts.enc + w.bb * parts.bb;
  return out;
}

}  // namespace hatl::losses
