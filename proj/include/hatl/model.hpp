#pragma once

// Layered sign-to-text model f(x) = t(b(x; W_b); W_t).
//
// Backbone b: n layers L_1..L_n (L_1 reads the input frames). Each layer is
//   A = Z W + shift(Z) U + b,   Z' = Z + tanh(A)    (L_1..L_{n-1}, input width)
//                               Z' = tanh(A)        (L_n, input width -> d)
// where shift(Z) is Z delayed by one frame (the first frame repeats itself).
// A frame classifier on top of the backbone provides the L_bb logits.
//
// Translation model t: a temporal-convolution encoder producing per-frame
// gloss logits (CTC and L_enc) and one decoder block with causal
// self-attention, cross-attention to the encoder and a tanh feed-forward.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hatl/autodiff.hpp"
#include "hatl/types.hpp"

namespace hatl {

struct ModelConfig {
  int input_dim = 16;
  int backbone_width = 16;
  int n_layers = 10;
  int hidden = 64;
  int encoder_layers = 3;
  int gloss_vocab = 12;  // gloss ids 1..gloss_vocab; column 0 is the CTC blank
  int text_vocab = 32;   // total text ids including PAD/BOS/EOS
  int max_text_len = 32;  // decoder positions (BOS + tokens)
  double init_scale = 1.0;

  void validate() const;
  int gloss_classes() const { return gloss_vocab + 1; }
  bool operator==(const ModelConfig&) const = default;
};

// Groups of the trainable set: 0 is the translation model t, m = 1..n is L_m.
class TrainableSet {
 public:
  TrainableSet() = default;
  explicit TrainableSet(int n_layers) : flags_(n_layers + 1, false) { flags_[0] = true; }

  static TrainableSet head_only(int n_layers) { return TrainableSet(n_layers); }
  static TrainableSet everything(int n_layers);

  bool contains(int group) const { return group >= 0 && group < static_cast<int>(flags_.size()) && flags_[group]; }
  void add(int group);
  int size() const;
  int n_layers() const { return static_cast<int>(flags_.size()) - 1; }
  // Backbone layers in the set, ascending.
  std::vector<int> layers() const;
  // Every group of *this is in other.
  bool subset_of(const TrainableSet& other) const;
  bool operator==(const TrainableSet&) const = default;

 private:
  std::vector<bool> flags_;
};

struct ParamSnapshot {
  std::vector<std::string> names;
  std::vector<Matrix> values;
  int epoch = 0;
  double metric = 0.0;
};

struct ForwardResult {
  Matrix backbone;      // G x backbone_width
  Matrix bb_logits;     // G x (gloss_vocab + 1)
  Matrix gloss_logits;  // G x (gloss_vocab + 1)
  Matrix text_logits;   // S x text_vocab
};

class LayeredModel {
 public:
  using Var = ad::Tape::Var;

  struct Heads {
    Var backbone = -1;
    Var bb_logits = -1;
    Var encoder = -1;
    Var gloss_logits = -1;
    Var text_logits = -1;
  };

  static LayeredModel build(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<ad::Param>& params() { return params_; }
  const std::vector<ad::Param>& params() const { return params_; }
  ad::Param& param(const std::string& name);
  const ad::Param& param(const std::string& name) const;
  std::size_t parameter_count() const;
  std::size_t parameter_count(int group) const;

  // Records backbone, both frame heads and the encoder. With an empty
  // decoder_input the text head is skipped (text_logits == -1).
  Heads forward(ad::Tape& tape, const Matrix& frames, std::span<const TokenId> decoder_input);
  Var encode(ad::Tape& tape, const Matrix& frames, Heads* heads = nullptr);
  Var decode(ad::Tape& tape, Var encoder_states, std::span<const TokenId> decoder_input);

  // Gradient-free convenience pass.
  ForwardResult forward(const Matrix& frames, std::span<const TokenId> decoder_input);
  // Encoder states for incremental decoding.
  Matrix encoder_states(const Matrix& frames);
  // Log-probabilities of the next token after `prefix` (which starts with BOS).
  Vector next_token_log_probs(const Matrix& encoder_states, std::span<const TokenId> prefix);

  void set_trainable(const TrainableSet& u);
  const TrainableSet& trainable() const { return trainable_; }

  void zero_grad();

  ParamSnapshot snapshot(int epoch = 0, double metric = 0.0) const;
  void restore(const ParamSnapshot& s);
  // Copies backbone (group >= 1) parameters by name; leaves t untouched.
  void load_backbone(const ParamSnapshot& s);

 private:
  explicit LayeredModel(const ModelConfig& cfg) : cfg_(cfg) {}
  ad::Param& add(std::string name, int group, ad::LrClass cls, Matrix init);
  void check_housing() const;

  ModelConfig cfg_;
  std::vector<ad::Param> params_;
  TrainableSet trainable_;
};

}  // namespace hatl
