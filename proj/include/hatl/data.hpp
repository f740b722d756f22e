#pragma once

// Synthetic sign-like corpus with a known frame alignment and a controlled
// domain shift between the pretraining split and the fine-tuning splits.
//
// Every gloss g has a prototype P_g = m + d_g (m shared by all glosses).
// A sample is a gloss sentence; each gloss emits a run of noisy copies of its
// prototype. The fine-tuning splits use shifted prototypes R (m + d'_g), with
// R a rotation in the coordinate planes (0,1), (2,3), ... and d'_g = d_g
// except for a remapped fraction of glosses that receive fresh offsets.
//
// Text is a deterministic function of the gloss sentence: each gloss maps to
// a word through a fixed permutation, some glosses are followed by a
// function word, and some adjacent blocks swap order.

#include <cstdint>
#include <string>
#include <vector>

#include "hatl/config.hpp"
#include "hatl/losses.hpp"
#include "hatl/types.hpp"

namespace hatl::data {

struct DatasetSpec {
  int gloss_vocab = 12;
  int function_words = 4;
  int pretrain_samples = 400;
  int train_samples = 240;
  int dev_samples = 60;
  int test_samples = 60;
  int gloss_len_min = 3;
  int gloss_len_max = 6;
  int dur_min = 2;
  int dur_max = 4;
  int feature_dim = 16;
  double noise = 0.3;
  double rotation_deg = 45.0;
  double remap_fraction = 0.25;
  double proto_mean_scale = 2.0;  // |m| per coordinate (standard deviation)
  double proto_dev_scale = 1.0;   // |d_g| per coordinate
  // The last `nuisance_dims` coordinates carry no gloss signal, only noise
  // of scale `nuisance_noise`; the rotation then pairs signal coordinate k
  // with nuisance coordinate k instead of (2k, 2k+1).
  int nuisance_dims = 0;
  double nuisance_noise = 1.0;
  int signers = 1;                // > 1 adds a per-signer offset to every frame
  double signer_spread = 0.2;
  std::uint64_t seed = 7;

  void validate() const;
  int text_vocab() const { return kFirstWord + gloss_vocab + function_words; }

  static DatasetSpec from(KeyValues& kv);
  static DatasetSpec load(const std::string& path);
  // `key = value` rendering accepted by load().
  std::string echo() const;
};

struct SampleRecord {
  std::string id;
  Matrix frames;          // G x feature_dim
  TokenSeq gloss;         // ids in 1..gloss_vocab
  TokenSeq text;          // word ids, no BOS/EOS
  TokenSeq frame_labels;  // G gloss ids

  bool operator==(const SampleRecord&) const = default;
};

using Split = std::vector<SampleRecord>;

struct Dataset {
  Split pretrain, train, dev, test;

  const Split& split(const std::string& name) const;
  bool operator==(const Dataset&) const = default;
};

// Prototype tables used by the generator; exposed for oracles.
struct Prototypes {
  Matrix source;   // V x d, rows are P_1..P_V (pretrain domain)
  Matrix unrotated;  // V x d, source with remapped rows replaced
  Matrix shifted;  // V x d, unrotated * R^T (fine-tuning domain means)
  Matrix rotation; // d x d
  int signal_dims = 0;
  std::vector<bool> remapped;  // per gloss, index g - 1
};

Prototypes make_prototypes(const DatasetSpec& spec);

// Word sequence for a gloss sentence.
TokenSeq transduce(const DatasetSpec& spec, const TokenSeq& gloss);

Dataset generate_dataset(const DatasetSpec& spec);

// Rounds every value to the 9 significant digits used on disk.
double quantize(double v);

void save_split(const Split& split, const std::string& path);
Split load_split(const std::string& path);
std::string format_sample(const SampleRecord& s);
// `file` and `line` are only used in error messages.
SampleRecord parse_sample(const std::string& text, const std::string& file, std::size_t line);

// Writes pretrain.tsv, train.tsv, dev.tsv, test.tsv (and spec.echo when a
// spec is given) into `dir`.
void save_dataset(const Dataset& d, const std::string& dir, const DatasetSpec* spec = nullptr);
Dataset load_dataset(const std::string& dir);

// Padded mini-batch. Frame rows past a sample's length are zero and masked;
// text positions past its length hold kPad and are masked.
struct Batch {
  std::vector<std::size_t> indices;
  std::vector<Matrix> frames;
  std::vector<losses::Mask> frame_mask;
  std::vector<TokenSeq> frame_labels;
  std::vector<TokenSeq> gloss;
  std::vector<TokenSeq> decoder_input;   // BOS y_1 .. y_S
  std::vector<TokenSeq> decoder_target;  // y_1 .. y_S EOS
  std::vector<losses::Mask> text_mask;

  std::size_t size() const { return indices.size(); }
};

// Pads the given samples to at least `frame_len` frames and `text_len`
// decoder positions (0 means the batch maximum).
Batch make_batch(const Split& split, const std::vector<std::size_t>& indices, Eigen::Index frame_len = 0,
                 std::size_t text_len = 0);

// Sample order for one epoch: a Fisher-Yates shuffle seeded by (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

// All batches of one epoch in order; the last may be short.
std::vector<Batch> batch_iter(const Split& split, int batch_size, std::uint64_t seed, int epoch);

struct SplitStats {
  std::size_t samples = 0;
  double gloss_len_mean = 0, gloss_len_cv = 0;
  double text_len_mean = 0, text_len_cv = 0;
  double frames_mean = 0, frames_cv = 0;
  int gloss_len_min = 0, gloss_len_max = 0;
  int text_len_min = 0, text_len_max = 0;
};

SplitStats split_stats(const Split& split);

}  // namespace hatl::data
